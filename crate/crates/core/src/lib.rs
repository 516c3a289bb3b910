pub mod analysis;
pub mod bifurcation;
pub mod emden;
pub mod error;
pub mod integrator;
pub mod nonlinearity;
pub mod numerics;
pub mod ode;
pub mod params;

pub use error::{Error, Result};

/// Version of this library, echoed into run metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
