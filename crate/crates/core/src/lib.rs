pub mod cascade_continuous;
pub mod cascade_discrete;
pub mod error;
pub mod fit;
pub mod io;
pub mod limitlaws;
pub mod params;
pub mod partition;
pub mod quad;
pub mod rng;
pub mod special;
pub mod spine;
pub mod walk;

pub use error::{Error, Result};
pub use params::{derive_params, CriticalParams, Regime, Selector};
