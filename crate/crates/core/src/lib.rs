//! Dual-objective group-relative policy optimization on a toy two-phase
//! generation task: tagged textual reasoning followed by grid-image token
//! synthesis, scored by exact deterministic reward oracles.

pub mod error;
pub mod grpo;
pub mod harness;
pub mod policy;
pub mod renderer;
pub mod rewards;
pub mod toyscene;
pub mod vocab;

pub use error::{Error, Result};
pub use grpo::{
    compute_advantages, dual_objective, dual_objective_grad, train_step, GroupAdvantages,
    HyperParams, StepReport,
};
pub use harness::{evaluate, evaluate_with, oracle_rollout, train, CorpusMix, EvalReport, RunConfig};
pub use policy::{
    derive_rng, greedy_rollout, load_checkpoint, sample_group, save_checkpoint, GenConfig,
    PolicyBundle, PolicyConfig, PolicyParams,
};
pub use renderer::{export_image, render, to_ppm, Grid, GridDims};
pub use rewards::{score_rollout, RewardBreakdown};
pub use toyscene::{generate_prompt, Difficulty, Prompt, SceneSpec};
pub use vocab::{parse_reasoning, Rollout, TokenId, VOCAB_SIZE};
