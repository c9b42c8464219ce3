//! Recovery of Sobolev functions from iid uniform samples with an adaptive,
//! cone-localized moving least squares operator, plus the experiment harness
//! that measures its empirical convergence rates.

pub mod error;
pub mod experiments;
pub mod geometry;
pub mod integration;
pub mod jet;
pub mod mls;
pub mod recovery;
pub mod sampling;
pub mod testbed;
pub mod verify;

pub use error::{Error, Result};
pub use geometry::{Cone, Domain, DomainKind, PointCloud, Region, Resolution};
pub use sampling::{derive_seed, quasi_uniform_points, sample_iid_uniform, PointSet};
