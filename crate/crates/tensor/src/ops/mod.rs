pub mod conv;
pub mod elementwise;
pub mod fft;
pub mod norm;
pub mod resample;
