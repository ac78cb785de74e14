//! Boosted linear-chain Markov networks for partially labeled sequences.
//!
//! The crate trains conditional models p(y|x) ∝ exp(Σ_k λ_k f_k(x, y)) on
//! 2-D activity trajectories where only part of each label sequence is
//! observed. Two trainers share the same model family:
//!
//! * [`train_boost`] — greedy boosting on the exponential rank-bound loss
//!   Σ_i 1/p(v_i|x_i): each round scores every feature by a second-order
//!   Taylor step (with a Cauchy curvature bound), picks a beam of the best,
//!   and applies Newton steps guarded by Armijo backtracking. Selection is
//!   sparse: untouched features keep weight zero.
//! * [`train_mle`] — the maximum-likelihood baseline: marginal negative
//!   log-likelihood minimized by limited-memory quasi-Newton (L-BFGS) with a
//!   Wolfe line search.
//!
//! Inference is exact on the chain ([`posteriors`], [`viterbi`]), in the log
//! domain throughout, with brute-force enumeration oracles for testing.
//! [`generate_dataset`] produces seeded synthetic activity trajectories and
//! [`mask_labels`] hides a fraction of each label sequence; [`evaluate`] and
//! [`recover_transition_matrix`] implement the evaluation protocol.
//!
//! The `chainboost` binary ties the pipeline together; see the repository
//! README for the file formats and a worked example.

mod boost;
mod error;
mod eval;
mod features;
mod inference;
mod math;
mod mle;
mod model;
mod synth;

pub mod io;

pub use boost::{
    candidate_stats, candidate_stats_scaled, exp_loss, line_search_step, rank_loss_exact,
    round_state, select_beam, sequence_weights, train_boost, BoostConfig, CandidateStats,
    CurvatureScale, RoundRecord, RoundState, SelectedStep, TrainTrace,
};
pub use error::{Error, Result};
pub use eval::{evaluate, recover_transition_matrix, EvalReport, LabelMetrics, TransitionRecovery};
pub use features::{build_feature_set, extract_obs_features, normalize, FeatureSetKind};
pub use inference::{
    brute_force_posteriors, build_potentials, conditional_log_prob, decode_track,
    expected_feature, expected_feature_enumerated, for_each_assignment, log_partition, posteriors,
    viterbi, viterbi_decode, ChainPosteriors, PotentialTable, ENUMERATION_LIMIT,
};
pub use math::{log_add_exp, log_sum_exp};
pub use mle::{nll_and_grad, train_mle, MleConfig, MleIteration, MleTrace};
pub use model::{
    eval_feature, score_assignment, Clique, CliqueKind, Feature, FeatureParams, LabelSpace, Model,
    NormStats, ObservationSequence, PartialLabeling, TrainingSequence, NUM_CHANNELS,
};
pub use synth::{generate_dataset, mask_labels, GeneratedDataset, GeneratedSequence, ScenarioSpec};
