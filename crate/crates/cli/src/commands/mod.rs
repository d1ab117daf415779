pub mod calibrate;
pub mod eval;
pub mod filter;
pub mod generate;
pub mod plot;
pub mod train;
