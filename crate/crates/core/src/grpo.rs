//! Dual-objective group-relative policy optimization: per-process
//! z-scored advantages, the segmented clipped surrogate over text and
//! image tokens, KL regularization against the frozen reference policy,
//! and the gradient-ascent parameter update.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::policy::{
    accumulate_weighted_grad, check_finite, eval_with_cache, sample_group, GenConfig,
    PolicyBundle,
};
use crate::rewards::{score_rollout, RewardBreakdown};
use crate::toyscene::Prompt;
use crate::vocab::Rollout;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub learning_rate: f64,
    pub group_size: usize,
    pub std_floor: f64,
    pub max_grad_norm: f64,
    /// Ablation switches: when false, the corresponding process-specific
    /// reward is zeroed before advantage computation.
    #[serde(default = "default_true")]
    pub use_sar: bool,
    #[serde(default = "default_true")]
    pub use_spr: bool,
}

fn default_true() -> bool {
    true
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            clip_epsilon: 0.2,
            kl_beta: 0.01,
            learning_rate: 0.5,
            group_size: 8,
            std_floor: 1e-6,
            max_grad_norm: 1.0,
            use_sar: true,
            use_spr: true,
        }
    }
}

/// Per-rollout dual advantages for one sampled group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupAdvantages {
    pub a_text: Vec<f64>,
    pub a_img: Vec<f64>,
}

/// Within-group z-scores with population standard deviation; all zeros
/// when the group is degenerate (std below the floor, or a single sample).
fn group_zscores(values: &[f64], std_floor: f64) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if values.len() == 1 || std < std_floor {
        vec![0.0; values.len()]
    } else {
        values.iter().map(|v| (v - mean) / std).collect()
    }
}

/// Text advantages from `r_sa + r_ha`, image advantages from `r_sp + r_ha`,
/// each z-scored within the group.
pub fn compute_advantages(breakdowns: &[RewardBreakdown], std_floor: f64) -> GroupAdvantages {
    compute_advantages_with(breakdowns, std_floor, true, true)
}

/// Advantage computation with ablation switches for the process-specific
/// reward terms; the shared holistic term always participates.
pub fn compute_advantages_with(
    breakdowns: &[RewardBreakdown],
    std_floor: f64,
    use_sar: bool,
    use_spr: bool,
) -> GroupAdvantages {
    let x: Vec<f64> = breakdowns
        .iter()
        .map(|b| if use_sar { b.r_sa } else { 0.0 } + b.r_ha)
        .collect();
    let y: Vec<f64> = breakdowns
        .iter()
        .map(|b| if use_spr { b.r_sp } else { 0.0 } + b.r_ha)
        .collect();
    GroupAdvantages {
        a_text: group_zscores(&x, std_floor),
        a_img: group_zscores(&y, std_floor),
    }
}

/// Per-token importance ratios `exp(l_current - l_old)`, split at the
/// text/image boundary. The old log-probs are the ones recorded at
/// sampling time.
pub fn token_ratios(
    bundle: &PolicyBundle,
    rollout: &Rollout,
    gen: &GenConfig,
) -> (Vec<f64>, Vec<f64>) {
    let (lt, li) = crate::policy::logprob_eval(&bundle.current, rollout, gen);
    let text = lt
        .iter()
        .zip(&rollout.logp_old_text)
        .map(|(l, o)| (l - o).exp())
        .collect();
    let img = li
        .iter()
        .zip(&rollout.logp_old_img)
        .map(|(l, o)| (l - o).exp())
        .collect();
    (text, img)
}

/// One token's clipped surrogate: `min(r*a, clip(r, 1-eps, 1+eps)*a)`.
pub fn clipped_term(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    (ratio * advantage).min(clipped * advantage)
}

/// Derivative of `clipped_term` with respect to the ratio: the advantage
/// when the unclipped branch is active, zero when clipping saturates.
pub fn clipped_term_dratio(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    if ratio * advantage <= clipped * advantage {
        advantage
    } else {
        0.0
    }
}

struct RolloutEval {
    caches: Vec<crate::policy::PositionCache>,
    ratios: Vec<f64>,       // all positions, text then image
    kl_terms: Vec<f64>,     // per-position unbiased KL estimates
    log_ref: Vec<f64>,      // reference log-probs per position
}

fn eval_rollout(bundle: &PolicyBundle, rollout: &Rollout, gen: &GenConfig) -> RolloutEval {
    let caches = eval_with_cache(&bundle.current, rollout, gen);
    let log_ref: Vec<f64> = eval_with_cache(&bundle.reference, rollout, gen)
        .iter()
        .map(|c| c.log_prob)
        .collect();
    let old: Vec<f64> = rollout
        .logp_old_text
        .iter()
        .chain(&rollout.logp_old_img)
        .copied()
        .collect();
    let ratios: Vec<f64> = caches
        .iter()
        .zip(&old)
        .map(|(c, o)| (c.log_prob - o).exp())
        .collect();
    let kl_terms: Vec<f64> = caches
        .iter()
        .zip(&log_ref)
        .map(|(c, lr)| {
            let d = lr - c.log_prob;
            d.exp() - d - 1.0
        })
        .collect();
    RolloutEval { caches, ratios, kl_terms, log_ref }
}

/// The dual objective (a value to maximize): segmented clipped surrogate
/// with process-wise advantages, minus `beta` times the mean per-rollout
/// KL estimate. Advantages are constants with respect to the parameters.
pub fn dual_objective(
    bundle: &PolicyBundle,
    group: &[Rollout],
    adv: &GroupAdvantages,
    hp: &HyperParams,
    gen: &GenConfig,
) -> f64 {
    objective_impl(bundle, group, adv, hp, gen, None).0
}

/// The objective value together with its analytic gradient with respect
/// to the current parameters.
pub fn dual_objective_grad(
    bundle: &PolicyBundle,
    group: &[Rollout],
    adv: &GroupAdvantages,
    hp: &HyperParams,
    gen: &GenConfig,
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; bundle.current.config.param_count()];
    let (value, _) = objective_impl(bundle, group, adv, hp, gen, Some(&mut grad));
    (value, grad)
}

/// Returns (objective value, mean per-rollout KL estimate).
fn objective_impl(
    bundle: &PolicyBundle,
    group: &[Rollout],
    adv: &GroupAdvantages,
    hp: &HyperParams,
    gen: &GenConfig,
    mut grad: Option<&mut Vec<f64>>,
) -> (f64, f64) {
    let g = group.len() as f64;
    let mut value = 0.0;
    let mut kl_mean = 0.0;
    for (i, rollout) in group.iter().enumerate() {
        let eval = eval_rollout(bundle, rollout, gen);
        let split = rollout.text_seq.len();
        let n_tokens = eval.ratios.len() as f64;
        let mut weights = grad.is_some().then(|| vec![0.0; eval.ratios.len()]);

        for (j, &ratio) in eval.ratios.iter().enumerate() {
            let a = if j < split { adv.a_text[i] } else { adv.a_img[i] };
            value += clipped_term(ratio, a, hp.clip_epsilon) / g;
            if let Some(w) = weights.as_mut() {
                // d value / d logp_j: through ratio = exp(logp - old),
                // then through the KL estimate.
                let d_surrogate = clipped_term_dratio(ratio, a, hp.clip_epsilon) * ratio / g;
                let d = eval.log_ref[j] - eval.caches[j].log_prob;
                let d_kl = -hp.kl_beta / (g * n_tokens) * (1.0 - d.exp());
                w[j] = d_surrogate + d_kl;
            }
        }
        let kl = eval.kl_terms.iter().sum::<f64>() / n_tokens;
        value -= hp.kl_beta * kl / g;
        kl_mean += kl / g;

        if let (Some(gr), Some(w)) = (grad.as_deref_mut(), weights.as_ref()) {
            accumulate_weighted_grad(&bundle.current, &eval.caches, w, gr);
        }
    }
    (value, kl_mean)
}

/// One optimization step's telemetry, serialized as one metrics line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub iteration: usize,
    pub mean_r_sa: f64,
    pub mean_r_sp: f64,
    pub mean_r_ha: f64,
    pub objective: f64,
    pub kl: f64,
    pub grad_norm: f64,
    pub format_valid_frac: f64,
}

/// Refreshes the sampling snapshot, samples and scores a group per prompt,
/// ascends the dual objective once with global gradient-norm clipping.
/// Deterministic given the seed.
pub fn train_step(
    bundle: &mut PolicyBundle,
    prompts: &[Prompt],
    hp: &HyperParams,
    rng_seed: u64,
    gen: &GenConfig,
) -> Result<StepReport> {
    bundle.refresh_old();
    let mut grad = vec![0.0; bundle.current.config.param_count()];
    let mut objective = 0.0;
    let mut kl_total = 0.0;
    let mut sums = (0.0, 0.0, 0.0); // r_sa, r_sp, r_ha
    let mut format_valid = 0usize;
    let mut n_rollouts = 0usize;

    for (p_idx, prompt) in prompts.iter().enumerate() {
        let group_seed = sub_seed(rng_seed, p_idx as u64);
        let group = sample_group(bundle, prompt, hp.group_size, group_seed, gen);
        let breakdowns: Vec<RewardBreakdown> =
            group.iter().map(|r| score_rollout(r, gen.grid)).collect();
        for b in &breakdowns {
            sums.0 += b.r_sa;
            sums.1 += b.r_sp;
            sums.2 += b.r_ha;
            if b.r_format == 1.0 {
                format_valid += 1;
            }
        }
        n_rollouts += breakdowns.len();
        let adv = compute_advantages_with(&breakdowns, hp.std_floor, hp.use_sar, hp.use_spr);
        let mut g = vec![0.0; bundle.current.config.param_count()];
        let (value, kl) = objective_impl(bundle, &group, &adv, hp, gen, Some(&mut g));
        objective += value / prompts.len() as f64;
        for (acc, gi) in grad.iter_mut().zip(&g) {
            *acc += gi / prompts.len() as f64;
        }
        kl_total += kl / prompts.len() as f64;
    }

    check_finite(&grad)?;
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let clipped_norm = if norm > hp.max_grad_norm {
        let scale = hp.max_grad_norm / norm;
        for g in grad.iter_mut() {
            *g *= scale;
        }
        hp.max_grad_norm
    } else {
        norm
    };
    for (p, g) in bundle.current.data.iter_mut().zip(&grad) {
        *p += hp.learning_rate * g;
    }

    let n = n_rollouts as f64;
    Ok(StepReport {
        iteration: 0,
        mean_r_sa: sums.0 / n,
        mean_r_sp: sums.1 / n,
        mean_r_ha: sums.2 / n,
        objective,
        kl: kl_total,
        grad_norm: clipped_norm,
        format_valid_frac: format_valid as f64 / n,
    })
}

/// Stable per-prompt sub-seed for group sampling.
pub fn sub_seed(base: u64, index: u64) -> u64 {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(b"group");
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}
