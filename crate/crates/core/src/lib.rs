//! Analysis of coded Poisson receiver systems.
//!
//! Users of `K` classes send copies of their packet to `T` receivers split
//! into `J` classes; receivers decode according to a load-dependent success
//! function and successive interference cancellation removes the remaining
//! copies of every decoded packet. The crate computes the large-`T` limit by
//! density evolution, classifies offered loads as stable, weakly stable or
//! ε-stable, maps stability regions and checks everything against a
//! finite-size simulation.

pub mod config;
pub mod degree;
pub mod error;
pub mod evolution;
pub mod montecarlo;
pub mod receivers;
pub mod regions;
pub mod stability;

pub use config::{load_preset, parse_config, preset_names, ConfigFile};
pub use degree::DegreeDistribution;
pub use error::{Error, Result};
pub use evolution::{
    de_fixed_point, de_step, offered_loads, success_probabilities, throughput, DeOptions,
    FixedPointResult, ReceiverClass, Start, SystemConfig, Throughput,
};
pub use montecarlo::{build_instance, peel, run_trials, BipartiteInstance, SimOptions, SimOutcome};
pub use receivers::{LoadVector, ReceiverKind, ReceiverModel};
pub use regions::{
    convexity_probe, extract_boundary, map_region, throughput_surface, Axis, GridSpec, MapOptions,
    RegionMap,
};
pub use stability::{
    check_sufficient_epsilon_stability, check_sufficient_stability, classify_load, epsilon_stable,
    irsa_threshold, percolation_threshold_1d, Criterion, EpsilonSpec, StabilityVerdict, Tolerances,
    Verdict,
};
