//! Quantum-trajectory simulation of a leaky cavity under instantaneous
//! displacement feedback, with a master-equation oracle, photon-correlation
//! metrology and a sequential-measurement equivalence checker.
//!
//! Units: ħ = 1 and the cavity decay rate κ sets the time scale.

// Negated comparisons also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod fock;
pub mod kraus;
pub mod linalg;
pub mod master;
pub mod metrology;
pub mod rng;
pub mod trajectory;

pub use dynamics::{
    apply_jump, apply_no_jump, build_conditional_generator, jump_probability, make_feedback_rule,
    no_jump_propagator, ConditionalGenerator, DecayRate, FeedbackRule, Propagator, TimeStep,
};
pub use error::{Error, Result};
pub use fock::{
    annihilation_op, creation_op, displacement_op, expectation, expectation_real, field_amplitude,
    make_coherent_state, make_number_basis_state, number_op, vacuum, CoherentAmplitude, FockOperator,
    OperatorKind, PureState, TruncationDim,
};
pub use kraus::{
    build_effective_state, entanglement_measure, sequential_distribution, EffectiveEntangledState, KrausPair,
    OutcomeDistribution, QubitState,
};
pub use master::{
    equivalence_check, evolve_density, lindblad_rhs, DensityMatrix, EquivalenceReport, EvolveMethod,
    LindbladGenerator, Observable,
};
pub use metrology::{
    amplitude_trace, estimate_g2, fit_scaling, phase_uncertainty, postselect, Averaging, CorrelationEstimate,
    PhaseEstimate, PhaseOptions, PostselectedSubensemble, ScalingFit, SlopeRule,
};
pub use trajectory::{
    prepare_initial_state, run_ensemble, run_trajectory, step, Backend, EnsembleRecord, RecordMode, SimConfig,
    TrajectoryRecord,
};

/// Crate version recorded in output metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Formats a float with 17 significant digits for CSV output.
pub fn csv_float(x: f64) -> String {
    format!("{x:.16e}")
}
