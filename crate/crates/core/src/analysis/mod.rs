//! Analysis of a learned vector field and of encoded trajectories.

pub mod chaos;
pub mod cycles;
pub mod equilibrium;
pub mod smoothness;
pub mod spectrum;
pub mod stability;
pub mod synthesis;

pub use chaos::{chaos_report, ChaosClass, ChaosConfig, ChaosReport};
pub use cycles::{detect_limit_cycle, LimitCycleConfig, LimitCycleReport, LimitCycleStatus};
pub use equilibrium::{
    find_equilibria, tail_average_candidates, CandidateSource, EquilibriumConfig,
    EquilibriumReport, EquilibriumSearch,
};
pub use smoothness::{smoothness_metric, SmoothnessOrder};
pub use spectrum::{eigenvalues_small, jacobian_at, natural_frequencies, JacobianMethod};
pub use stability::{check_stability, StabilityConfig, StabilityResult};
pub use synthesis::{damped_field, DampedField};
