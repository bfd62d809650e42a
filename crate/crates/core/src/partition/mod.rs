//! Partition-function coefficients, resolvent, offspring law and identities.

pub mod density;
pub mod o2;
pub mod table;

pub use density::Spectral;
pub use o2::{o2_fk, o2_table};
pub use table::{circle_series, fk_table, rho_moments, FkMethod, PartitionTable};
pub mod offspring;
pub use offspring::{central_factors, offspring_law, OffspringLaw, TailModel};
pub mod volume;
pub use volume::{solve_expected_volume, ExpectedVolume, GenerationMeans, VolumeGrid, VolumeMethod};
pub mod identities;
pub use identities::{criticality_integral, identity_report, tail_check, IdentityRow, StepLaw};
