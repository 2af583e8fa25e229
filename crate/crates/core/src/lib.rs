//! Robust Wasserstein barycenters of discrete measures.
//!
//! The crate covers exact and entropic optimal transport, the robust
//! (outlier-trimmed) Wasserstein distance, fixed-support and free-support
//! robust barycenters, a layered coreset for large measure collections, and
//! synthetic data generation plus evaluation helpers.

pub mod coreset;
pub mod error;
pub mod measures;
pub mod ot;
pub mod fixed;
pub mod free;
pub mod robust;
pub mod synth;

pub use error::{Error, Result};
pub use measures::{
    build_cost_matrix, euclidean, squared_euclidean, CostMatrix, DiscreteMeasure, Point,
    WeightedMeasureSet,
};
pub use ot::{
    solve_ot_entropic, solve_ot_exact, wasserstein_distance, wasserstein_power, OtSolution,
    TransportPlan,
};
pub use robust::{
    augment_pair, phi_embed, psi_extract, robust_distance, robust_distance_root, robust_power,
    AugmentedPair, OutlierBudget, RobustSolution, SolveMode,
};
pub use fixed::{
    awb_cost, rwb_cost, solve_fixed_awb, solve_fixed_awb_exact, wb_cost, FixedProblem,
    FixedSolution,
};
pub use coreset::{
    approx_init, build_coreset, coreset_around, outer_layer_weights, partition_layers,
    CoresetParams, CoresetResult, Initialization, LayerPartition, LocalRegion,
};
pub use free::{
    solve_free_rwb, update_locations, update_weights, FreeConfig, FreeResult, SolveTrace,
    WeightUpdateSet,
};
pub use synth::{
    contaminate, evaluate, gen_gaussian_dataset, quantize_pointcloud, run_bench, BenchConfig,
    BenchReport, ContaminationSpec, EvalReport, ReportRow,
};
