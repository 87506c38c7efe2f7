fn main() {
    std::process::exit(svsr_cli::main_with(std::env::args_os()));
}
