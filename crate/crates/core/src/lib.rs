pub mod dynamics;
pub mod equilibria;
pub mod error;
pub mod integrate;
pub mod manifolds;
pub mod model;
pub mod scattering;

pub use dynamics::{CompactState, RadialState};
pub use error::{Error, Result};
pub use model::{EnergyLevel, MassParams};
