//! Off-policy evaluation for tabular absorbing Markov decision processes.
//!
//! The crate estimates the expected undiscounted return of a target policy
//! from truncated episodes collected under a different behavior policy. The
//! main estimator learns the ratio between the target and behavior
//! occupancy measures by a minimax least-squares fit ([`estimators::mwla_solve`]);
//! baselines, exact linear-algebra oracles and an episodic taxi environment
//! are included for experiments.
//!
//! ```
//! use ope_absorb::prelude::*;
//!
//! let desk = DeskInstance::new();
//! let pi_b = desk.behavior(0.2).unwrap();
//! let batch = sample_batch(&desk.mdp, &pi_b, 2000, 200, 7);
//! let report = mwla_estimate(&batch, &desk.target, DEFAULT_LAMBDA, true).unwrap();
//! let truth = exact_return(&desk.mdp, &desk.target).unwrap();
//! assert!((report.point_estimate - truth).abs() < 1.0);
//! ```

pub mod analysis;
pub mod error;
pub mod estimators;
pub mod exact;
pub mod instances;
pub mod linalg;
pub mod mdp;
pub mod nnls;
pub mod qlearn;
pub mod seed;
pub mod stats;
pub mod taxi;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::analysis::{markov_bound, regime_classify, scan_moment_params, solve_h_m, Regime};
    pub use crate::error::{Error, Result};
    pub use crate::estimators::{
        empirical_error, mswla_from_stats, mswla_solve, mswla_solve_with, mswla_weights, mwl_gamma_from_stats, mwl_gamma_solve, mwla_estimate,
        mwla_return, mwla_solve, naive_average, on_policy_estimate, trajectory_is, EstimateReport, Method,
        WeightEstimate, DEFAULT_LAMBDA,
    };
    pub use crate::exact::{
        absorption_time_mgf, exact_discounted_return, exact_occupancy, exact_q, exact_return, occupancy_ratio,
        population_error, ErrorFunction, ExactSolution, Mgf,
    };
    pub use crate::instances::{random_mdp, random_softmax_policy, DeskInstance, RandomMdpSpec};
    pub use crate::mdp::{absorbing_from_discounted, sample_batch, sample_episode, sample_episodes, Episode, EpisodeBatch, Policy, TabularMdp};
    pub use crate::qlearn::{mix_policies, q_learning, q_learning_softmax, QLearningConfig, QTable, StepSize};
    pub use crate::seed::{derive_seed, stream_rng};
    pub use crate::stats::{accumulate_stats, SufficientStats};
    pub use crate::taxi::{build_taxi, TaxiState};
}
