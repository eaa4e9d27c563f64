pub mod autodiff;
pub mod cli;
pub mod engine;
pub mod epie;
pub mod error;
pub mod fft;
pub mod field;
pub mod io;
pub mod metrics;
pub mod networks;
pub mod optim;
pub mod physics;
pub mod provenance;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
pub use field::{ComplexField, RealImage};
