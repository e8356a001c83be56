//! Mean-field dynamics of a single-mode cavity coupled to an inhomogeneously
//! broadened spin ensemble.

pub mod analysis;
pub mod config;
pub mod drive;
pub mod error;
pub mod model;
pub mod oracle;
pub mod quadrature;
pub mod scan;
pub mod spectral;
pub mod volterra;

pub use drive::DriveProtocol;
pub use error::{Error, Result};
pub use model::{angular_to_mhz, mhz_to_angular, CavityTrajectory, SystemParams, TimeGrid};
pub use spectral::SpectralDensity;
