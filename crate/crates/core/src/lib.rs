//! Simulation, spectral classification, and property verification for
//! stochastic abelian networks in Markovian environments.
//!
//! A network is a finite directed graph whose vertices carry particle counts,
//! per-vertex Markovian environment chains, and finite-support toppling
//! distributions. The crate covers:
//!
//! - declaring and validating networks ([`model`]);
//! - the expected toppling matrix, its Perron data, and the criticality
//!   classification ([`spectral`]);
//! - the deterministic stackwise toppling engine with Abelian-property and
//!   least-action verification harnesses ([`stack`]);
//! - the legal stochastic dynamics and the environment-sampled instruction
//!   stack ([`dynamics`]);
//! - the eigenvector-sampled toppling random walk, excursion statistics, and
//!   survival experiments ([`walk`]);
//! - conserved-quantity detection and never-stabilizing initial states
//!   ([`conserved`]).
//!
//! All randomness flows through [`dynamics::RngStream`], a seeded ChaCha8
//! stream with a fixed, documented splitting rule, so every experiment is
//! reproducible bit-for-bit from its seed.

// Index arithmetic over small dense matrices reads better as explicit loops.
#![allow(clippy::needless_range_loop)]

mod linalg;

pub mod conserved;
pub mod dynamics;
pub mod model;
pub mod spectral;
pub mod stack;
pub mod walk;

pub use conserved::{
    detect, unstable_initial_state, verify_conserved, ConservedQuantity, DetectionResult, Witness,
};
pub use dynamics::{
    run_legal, sampled_stack, select_vertex, step, Configuration, RngStream, RunOutcome, RunTag,
    SampledStack,
};
pub use model::{
    expected_step, toppling_matrix, validate_bfb, validate_irr, validate_moli, EnvironmentSpec,
    NetworkSpec, SpecError, ToppleMatrix, TopplingDistribution,
};
pub use spectral::{
    check_primitive, classify, criticality, perron_eigenpair, stationary_distribution, Regime,
    RegimeTag, SpectralReport,
};
pub use stack::{
    apply_sequence, check_abelian, check_least_action, greedy_legal_stabilize, is_legal, is_stable,
    odometer, topple, Instruction, InstructionSource, MaterializedStack, StackState,
};
pub use walk::{
    drift_report, empirical_joint_stationary, excursion_sums_check, find_viable, run_walk,
    survival_experiment, DriftReport, ExcursionRecord, SurvivalReport, WalkEngine,
};
