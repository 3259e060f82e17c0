//! Comparisons between the two calculi, order checks and sampling.

mod clarify;
mod compare;
mod montecarlo;
mod order;

pub use clarify::{
    bw_clarification, fr_phi, healey_decomposition, lab_readout, Clarification, HealeyDecomposition, HealeyTerm,
    RECORD, REMEASURE,
};
pub use compare::{compare_at, compare_semantics, ComparisonReport, ComparisonRow, AGREE_TOL};
pub use montecarlo::{
    exact_marginal, mc_sample, mc_sample_with, sigma_bands, total_variation, BandRow, EmpiricalDistribution,
    OutcomeModel,
};
pub use order::order_invariance;
