//! Finite-dimensional simulation of consistent/decoherent histories.
//!
//! The crate builds history spaces over small Hilbert spaces (a Hamiltonian,
//! a time grid, one projective sample space per time, and an initial state),
//! enumerates the resulting branch tree, and computes for each history its
//! chain vector, Born weight, the decoherence functional
//! D(α, β) = ⟨ψ_α∣ψ_β⟩, and four interference measures I₁–I₄ which grade how
//! strongly a branch is disturbed by the other branches arriving in the same
//! final cell. Histories whose chosen measure falls below a threshold are
//! classified as causal.
//!
//! Modules:
//! - [`hilbert`]: dense complex linear algebra and Hermitian-generated
//!   unitary propagation;
//! - [`event_algebra`]: projective sample spaces (exact and almost
//!   orthogonal), Boolean event operations, coarse-graining;
//! - [`histories`]: history spaces, tree enumeration with pruning, chain
//!   vectors, decoherence matrices, consistency/branching/additivity checks;
//! - [`interference`]: the I₁–I₄ measures, causal classification, stepwise
//!   causality, inequality audits;
//! - [`models`]: concrete systems (spin-environment dephasing, tight-binding
//!   lattice, von Neumann measurement chain, a non-orthogonal measurement
//!   probe);
//! - [`runner`]: config-driven experiment runner behind the CLI.
//!
//! Everything is deterministic: identical inputs (and seeds, where a model
//! draws parameters) produce bit-identical results at any thread count.

pub mod error;
pub mod event_algebra;
pub mod hilbert;
pub mod histories;
pub mod interference;
pub mod models;
pub mod runner;

pub use error::{Error, Result};
pub use event_algebra::{
    cell_projectors, coarsen, event_and, event_not, event_or, is_coarsening_of,
    pointer_projectors, CellPartition, CoarseningMap, DeviationRecord, SampleSpace, SpaceKind,
};
pub use hilbert::{
    apply, hermitian_check, inner, propagator, HermitianCheck, LinearOperator, Propagator,
    StateVector, DEFAULT_TOL, NORM_TOL,
};
pub use histories::{
    additivity_check, born_weight, branching_structure_check, consistency_check,
    decoherence_matrix, weight_sum_identity, AdditivityReport, BranchingReport,
    ConsistencyReport, DecoherenceMatrix, EnumerationOutcome, EnumerationTree, HistoryRecord,
    HistorySpace, ResourceCaps, WeightSumIdentity,
};
pub use interference::{
    classify_causal, inequality_audit, interference_measures, stepwise_causality,
    InequalityAudit, InterferenceReport, Measure, MeasureSet,
};
pub use models::{
    nonorthogonal_probe, ChainStages, LatticeModel, MeasurementChainModel, ProbeReport,
    SpinEnvModel,
};
