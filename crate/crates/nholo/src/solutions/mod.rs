//! The anholonomic deformation method: assembling exact off-diagonal
//! solutions from generating data, verifying the decoupled field equations,
//! and the named metric families.

pub mod families;
pub mod finsler;
pub mod generate;
pub mod residual;

pub use families::{
    defaux_corrections, nc_polarize_schwarzschild, nc_schwarzschild_gamma, rotoid_horizon_root,
    rotoid_metric, schwarzschild_prime, soliton_residual, NcSource, RadialMap, RotoidParams,
    SolitonField,
};
pub use finsler::{finsler_reencode, FinslerData, VielbeinSet};
pub use generate::{
    generate_metric, harmonic_psi, sigma_profile, GenerateOptions, GeneratedSolution,
    GeneratingData,
};
pub use residual::{check_levi_civita_conditions, levi_civita_vacuum_residual, residual_ep1a, Grid3};
