//! Privacy-optimal message deferral for time-based activity profiles.
//!
//! A user's posting activity over a cyclic time frame (a day, a week) is
//! summarized as a PMF `q` over `n` slots. Deferring a fraction `phi` of the
//! messages, storing them in some slots and forwarding them in others, turns
//! `q` into the apparent profile `t = q - s + r`. This crate computes the
//! storing/forwarding pair that maximizes the Shannon entropy of `t`,
//! characterizes the resulting buffer analytically (starting index, steady
//! occupancy, capacity, delay distribution) and checks the analysis against a
//! seeded discrete-event simulation.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`profile`] | slot schemes, timestamp binning, [`ActivityProfile`] |
//! | [`metrics`] | entropy, KL divergence, total variation, critical rate |
//! | [`solver`] | water-filling optimum and the privacy-deferral curve |
//! | [`oracle`] | generic projected-ascent and grid-search solvers used for verification |
//! | [`buffer`] | steady-state occupancy, capacity and delay distribution |
//! | [`sim`] | Monte Carlo simulation of the storage/forwarding selectors |
//! | [`ingest`], [`population`] | log ingestion, synthetic populations, population studies |

pub mod buffer;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod oracle;
pub mod population;
pub mod profile;
pub mod sim;
pub mod solver;
pub mod stats;

pub use buffer::{
    capacity, delay_distribution, find_starting_index, steady_state, DelayDistribution,
    SteadyStatePattern,
};
pub use error::{Error, Result};
pub use metrics::{critical_rate, entropy, kl_divergence, total_variation, uniform};
pub use oracle::{grid_search, solve_numerical_oracle};
pub use profile::{build_profile, ActivityProfile, Period, SlotScheme, TimestampRecord};
pub use sim::{
    empirical_vs_analytic, run_simulation, Comparison, Discipline, OutflowPolicy, SimConfig,
    SimReport,
};
pub use solver::{
    apparent_profile, privacy_deferral_curve, solve_optimal, DeferralStrategy, PrivacyCurvePoint,
};

/// Values with magnitude below this are treated as exact zeros.
pub const ZERO_SNAP: f64 = 1e-12;

/// Tolerance on `sum(p) == 1` for a vector to count as a PMF.
pub const PMF_TOL: f64 = 1e-9;
