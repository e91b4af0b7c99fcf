//! The tiny autoregressive policy: a fixed-window token scorer with one
//! tanh hidden layer, phase-masked softmax sampling, log-probability
//! evaluation, policy snapshots, and an analytic backward pass.
//!
//! Parameter flat ordering (used by gradients and checkpoints):
//! token embeddings `[vocab x embed]` row-major, hidden weights
//! `[context*embed x hidden]` row-major, hidden bias `[hidden]`, output
//! weights `[hidden x vocab]` row-major, output bias `[vocab]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::renderer::GridDims;
use crate::toyscene::Prompt;
use crate::vocab::{phase_mask, Phase, Rollout, TokenId, END_TEXT, IMG_START, PAD, VOCAB_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub context_len: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            vocab_size: VOCAB_SIZE,
            embed_dim: 16,
            hidden_dim: 64,
            context_len: 12,
        }
    }
}

impl PolicyConfig {
    pub fn param_count(&self) -> usize {
        let (v, e, h, k) = (self.vocab_size, self.embed_dim, self.hidden_dim, self.context_len);
        v * e + k * e * h + h + h * v + v
    }

    fn offsets(&self) -> (usize, usize, usize, usize) {
        let (v, e, h, k) = (self.vocab_size, self.embed_dim, self.hidden_dim, self.context_len);
        let w = v * e;
        let b = w + k * e * h;
        let u = b + h;
        let c = u + h * v;
        (w, b, u, c)
    }
}

/// Generation-shape settings shared by sampling and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenConfig {
    pub max_text_len: usize,
    pub grid: GridDims,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            max_text_len: 48,
            grid: GridDims::DEFAULT,
        }
    }
}

impl GenConfig {
    pub fn image_len(&self) -> usize {
        self.grid.cell_count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub config: PolicyConfig,
    pub data: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(config: PolicyConfig) -> Self {
        PolicyParams {
            data: vec![0.0; config.param_count()],
            config,
        }
    }

    /// Uniform init in [-0.05, 0.05], deterministic from the rng.
    pub fn init(config: PolicyConfig, rng: &mut impl Rng) -> Self {
        let data = (0..config.param_count())
            .map(|_| rng.gen_range(-0.05..0.05))
            .collect();
        PolicyParams { config, data }
    }

    fn embedding(&self, token: TokenId) -> &[f64] {
        let e = self.config.embed_dim;
        &self.data[token * e..(token + 1) * e]
    }

    fn hidden_w(&self) -> &[f64] {
        let (w, b, _, _) = self.config.offsets();
        &self.data[w..b]
    }

    fn hidden_b(&self) -> &[f64] {
        let (_, b, u, _) = self.config.offsets();
        &self.data[b..u]
    }

    fn output_w(&self) -> &[f64] {
        let (_, _, u, c) = self.config.offsets();
        &self.data[u..c]
    }

    fn output_b(&self) -> &[f64] {
        let (_, _, _, c) = self.config.offsets();
        &self.data[c..]
    }
}

/// Current, sampling-time, and frozen reference parameter sets.
#[derive(Debug, Clone)]
pub struct PolicyBundle {
    pub current: PolicyParams,
    pub old: PolicyParams,
    pub reference: PolicyParams,
}

impl PolicyBundle {
    pub fn new(params: PolicyParams) -> Self {
        PolicyBundle {
            old: params.clone(),
            reference: params.clone(),
            current: params,
        }
    }

    /// Snapshot the current policy as the sampling policy.
    pub fn refresh_old(&mut self) {
        self.old = self.current.clone();
    }
}

/// One position's forward pass: hidden activations and the masked
/// log-softmax over the full vocabulary (`-inf` on inadmissible tokens).
pub struct ForwardOut {
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
    pub log_z: f64,
    pub phase: Phase,
}

impl ForwardOut {
    pub fn log_prob(&self, token: TokenId) -> f64 {
        self.logits[token] - self.log_z
    }

    /// Probabilities over the full vocabulary; exactly 0 on masked tokens.
    pub fn probs(&self) -> Vec<f64> {
        let admissible = phase_mask(self.phase);
        let mut out = vec![0.0; self.logits.len()];
        for &t in admissible {
            out[t] = (self.logits[t] - self.log_z).exp();
        }
        out
    }
}

/// Last `context_len` tokens of `stream`, left-padded with `<pad>`.
pub fn context_window(stream: &[TokenId], k: usize) -> Vec<TokenId> {
    let mut ctx = vec![PAD; k];
    let take = stream.len().min(k);
    ctx[k - take..].copy_from_slice(&stream[stream.len() - take..]);
    ctx
}

/// Next-token scores for a padded context window: concatenated embeddings,
/// one tanh hidden layer, one output layer, phase mask, log-softmax.
pub fn forward(params: &PolicyParams, ctx: &[TokenId], phase: Phase) -> ForwardOut {
    let cfg = &params.config;
    debug_assert_eq!(ctx.len(), cfg.context_len);
    let (e, hd, v) = (cfg.embed_dim, cfg.hidden_dim, cfg.vocab_size);

    // hidden = tanh(W^T x + b), with x the concatenated context embeddings.
    let w = params.hidden_w();
    let mut hidden = params.hidden_b().to_vec();
    for (slot, &tok) in ctx.iter().enumerate() {
        let emb = params.embedding(tok);
        for (j, &xj) in emb.iter().enumerate() {
            if xj != 0.0 {
                let row = &w[(slot * e + j) * hd..(slot * e + j + 1) * hd];
                for (h, &wv) in row.iter().enumerate() {
                    hidden[h] += xj * wv;
                }
            }
        }
    }
    for h in hidden.iter_mut() {
        *h = h.tanh();
    }

    // logits = U^T hidden + c, then mask and normalize over admissible ids.
    let u = params.output_w();
    let mut logits = params.output_b().to_vec();
    for (h, &hv) in hidden.iter().enumerate() {
        let row = &u[h * v..(h + 1) * v];
        for (t, &uv) in row.iter().enumerate() {
            logits[t] += hv * uv;
        }
    }
    let admissible = phase_mask(phase);
    let max = admissible
        .iter()
        .map(|&t| logits[t])
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = admissible.iter().map(|&t| (logits[t] - max).exp()).sum();
    let log_z = max + sum.ln();
    for t in 0..v {
        if !admissible.contains(&t) {
            logits[t] = f64::NEG_INFINITY;
        }
    }
    ForwardOut { hidden, logits, log_z, phase }
}

fn sample_token(out: &ForwardOut, rng: &mut impl Rng) -> TokenId {
    let admissible = phase_mask(out.phase);
    let r: f64 = rng.gen();
    let mut cum = 0.0;
    for &t in admissible {
        cum += out.log_prob(t).exp();
        if r < cum {
            return t;
        }
    }
    *admissible.last().expect("non-empty mask")
}

fn argmax_token(out: &ForwardOut) -> TokenId {
    let admissible = phase_mask(out.phase);
    let mut best = admissible[0];
    for &t in &admissible[1..] {
        if out.logits[t] > out.logits[best] {
            best = t;
        }
    }
    best
}

fn decode(
    params: &PolicyParams,
    prompt: &Prompt,
    gen: &GenConfig,
    mut pick: impl FnMut(&ForwardOut) -> TokenId,
) -> Rollout {
    let k = params.config.context_len;
    let mut stream = prompt.surface.clone();
    let mut text_seq = Vec::new();
    let mut logp_old_text = Vec::new();
    loop {
        let out = forward(params, &context_window(&stream, k), Phase::Text);
        let t = pick(&out);
        text_seq.push(t);
        logp_old_text.push(out.log_prob(t));
        stream.push(t);
        if t == END_TEXT || text_seq.len() == gen.max_text_len {
            break;
        }
    }
    stream.push(IMG_START);
    let mut image_seq = Vec::new();
    let mut logp_old_img = Vec::new();
    for _ in 0..gen.image_len() {
        let out = forward(params, &context_window(&stream, k), Phase::Image);
        let t = pick(&out);
        image_seq.push(t);
        logp_old_img.push(out.log_prob(t));
        stream.push(t);
    }
    Rollout {
        prompt: prompt.clone(),
        text_seq,
        image_seq,
        logp_old_text,
        logp_old_img,
    }
}

/// Stable sub-seed derivation, so adding streams never perturbs others.
pub fn derive_rng(base_seed: u64, label: &str, index: u64) -> ChaCha12Rng {
    let mut hasher = Sha256::new();
    hasher.update(base_seed.to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha12Rng::from_seed(seed)
}

/// Samples G rollouts under the sampling-time snapshot `bundle.old`,
/// recording per-token log-probabilities. Deterministic given the seed.
pub fn sample_group(
    bundle: &PolicyBundle,
    prompt: &Prompt,
    group_size: usize,
    rng_seed: u64,
    gen: &GenConfig,
) -> Vec<Rollout> {
    (0..group_size)
        .map(|i| {
            let mut rng = derive_rng(rng_seed, "rollout", i as u64);
            decode(&bundle.old, prompt, gen, |out| sample_token(out, &mut rng))
        })
        .collect()
}

/// Greedy (argmax) decoding, used for evaluation.
pub fn greedy_rollout(params: &PolicyParams, prompt: &Prompt, gen: &GenConfig) -> Rollout {
    decode(params, prompt, gen, argmax_token)
}

/// Per-position cache for log-prob evaluation and the backward pass.
pub struct PositionCache {
    pub ctx: Vec<TokenId>,
    pub token: TokenId,
    pub phase: Phase,
    pub hidden: Vec<f64>,
    /// Full-vocabulary probabilities, exactly 0 on masked tokens.
    pub probs: Vec<f64>,
    pub log_prob: f64,
}

/// Replays every position of a rollout under `params`, caching what the
/// backward pass needs. Text token j is conditioned on the prompt and the
/// text prefix; image token j on the prompt, the whole text sequence, the
/// start token, and the image prefix.
pub fn eval_with_cache(params: &PolicyParams, rollout: &Rollout, _gen: &GenConfig) -> Vec<PositionCache> {
    let k = params.config.context_len;
    let mut stream = rollout.prompt.surface.clone();
    let mut caches = Vec::with_capacity(rollout.token_count());
    for &t in &rollout.text_seq {
        let ctx = context_window(&stream, k);
        let out = forward(params, &ctx, Phase::Text);
        caches.push(PositionCache {
            ctx,
            token: t,
            phase: Phase::Text,
            probs: out.probs(),
            log_prob: out.log_prob(t),
            hidden: out.hidden,
        });
        stream.push(t);
    }
    stream.push(IMG_START);
    for &t in &rollout.image_seq {
        let ctx = context_window(&stream, k);
        let out = forward(params, &ctx, Phase::Image);
        caches.push(PositionCache {
            ctx,
            token: t,
            phase: Phase::Image,
            probs: out.probs(),
            log_prob: out.log_prob(t),
            hidden: out.hidden,
        });
        stream.push(t);
    }
    caches
}

/// Log-probability of every sampled token under `params`, split into the
/// text and image parts.
pub fn logprob_eval(
    params: &PolicyParams,
    rollout: &Rollout,
    gen: &GenConfig,
) -> (Vec<f64>, Vec<f64>) {
    let caches = eval_with_cache(params, rollout, gen);
    let split = rollout.text_seq.len();
    let all: Vec<f64> = caches.iter().map(|c| c.log_prob).collect();
    (all[..split].to_vec(), all[split..].to_vec())
}

/// Per-token unbiased KL estimate between the current and reference
/// policies, averaged over all tokens of the rollout:
/// `u = exp(l_ref - l_cur) - (l_ref - l_cur) - 1`, which is >= 0.
pub fn kl_estimate(bundle: &PolicyBundle, rollout: &Rollout, gen: &GenConfig) -> f64 {
    let (ct, ci) = logprob_eval(&bundle.current, rollout, gen);
    let (rt, ri) = logprob_eval(&bundle.reference, rollout, gen);
    let terms = ct
        .iter()
        .chain(ci.iter())
        .zip(rt.iter().chain(ri.iter()))
        .map(|(&lc, &lr)| {
            let d = lr - lc;
            d.exp() - d - 1.0
        });
    let n = rollout.token_count();
    terms.sum::<f64>() / n as f64
}

/// Accumulates `sum_j weights[j] * grad(log pi(token_j | ctx_j))` into
/// `grad`, one weight per cached position. This is the whole backward
/// pass: every training objective reduces to weighted per-token log-prob
/// gradients with analytically computed weights.
pub fn accumulate_weighted_grad(
    params: &PolicyParams,
    caches: &[PositionCache],
    weights: &[f64],
    grad: &mut [f64],
) {
    let cfg = &params.config;
    let (e, hd, v) = (cfg.embed_dim, cfg.hidden_dim, cfg.vocab_size);
    let (w_off, b_off, u_off, c_off) = cfg.offsets();
    let w = params.hidden_w();
    let u = params.output_w();

    let mut g_hidden = vec![0.0; hd];
    let mut g_pre = vec![0.0; hd];
    for (cache, &weight) in caches.iter().zip(weights) {
        if weight == 0.0 {
            continue;
        }
        let admissible = phase_mask(cache.phase);

        // d logp / d logit_v = onehot(token) - softmax (0 on masked ids).
        // Output bias and weights first.
        for &t in admissible {
            let g_z = weight * ((t == cache.token) as u8 as f64 - cache.probs[t]);
            grad[c_off + t] += g_z;
        }
        g_hidden.iter_mut().for_each(|g| *g = 0.0);
        for (h, &hv) in cache.hidden.iter().enumerate() {
            let row = &u[h * v..(h + 1) * v];
            let mut acc = 0.0;
            for &t in admissible {
                let g_z = weight * ((t == cache.token) as u8 as f64 - cache.probs[t]);
                grad[u_off + h * v + t] += hv * g_z;
                acc += row[t] * g_z;
            }
            g_hidden[h] = acc;
        }

        // Through tanh.
        for h in 0..hd {
            g_pre[h] = g_hidden[h] * (1.0 - cache.hidden[h] * cache.hidden[h]);
        }
        for h in 0..hd {
            grad[b_off + h] += g_pre[h];
        }

        // Hidden weights and context embeddings.
        for (slot, &tok) in cache.ctx.iter().enumerate() {
            let emb = params.embedding(tok);
            for (j, &xj) in emb.iter().enumerate() {
                let row = &w[(slot * e + j) * hd..(slot * e + j + 1) * hd];
                let gw = &mut grad[w_off + (slot * e + j) * hd..];
                let mut gx = 0.0;
                for h in 0..hd {
                    gw[h] += xj * g_pre[h];
                    gx += row[h] * g_pre[h];
                }
                grad[tok * e + j] += gx;
            }
        }
    }
}

/// Rejects gradients containing NaN or infinity.
pub fn check_finite(grad: &[f64]) -> Result<()> {
    match grad.iter().position(|g| !g.is_finite()) {
        Some(i) => Err(Error::NonFiniteGradient(i)),
        None => Ok(()),
    }
}

// ---------------------------------------------------------------------------
// Checkpoints

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    vocab_hash: String,
    params_sha256: String,
    policy: PolicyConfig,
    gen: GenConfig,
    current: Vec<f64>,
    reference: Vec<f64>,
}

fn params_digest(current: &[f64], reference: &[f64]) -> String {
    let mut hasher = Sha256::new();
    for v in current.iter().chain(reference) {
        hasher.update(format!("{v};").as_bytes());
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Serializes the bundle (current + frozen reference) with the vocabulary
/// hash and a parameter checksum.
pub fn checkpoint_to_string(bundle: &PolicyBundle, gen: &GenConfig) -> String {
    let doc = CheckpointDoc {
        vocab_hash: crate::vocab::vocab_hash(),
        params_sha256: params_digest(&bundle.current.data, &bundle.reference.data),
        policy: bundle.current.config,
        gen: *gen,
        current: bundle.current.data.clone(),
        reference: bundle.reference.data.clone(),
    };
    serde_json::to_string(&doc).expect("checkpoint serializes")
}

/// Loads a checkpoint, rejecting vocabulary or checksum mismatches.
pub fn checkpoint_from_string(text: &str) -> Result<(PolicyBundle, GenConfig)> {
    let doc: CheckpointDoc = serde_json::from_str(text)?;
    if doc.vocab_hash != crate::vocab::vocab_hash() {
        return Err(Error::ChecksumMismatch("vocabulary hash".into()));
    }
    if doc.params_sha256 != params_digest(&doc.current, &doc.reference) {
        return Err(Error::ChecksumMismatch("parameter checksum".into()));
    }
    let n = doc.policy.param_count();
    if doc.current.len() != n || doc.reference.len() != n {
        return Err(Error::ChecksumMismatch("parameter count".into()));
    }
    let current = PolicyParams { config: doc.policy, data: doc.current };
    let reference = PolicyParams { config: doc.policy, data: doc.reference };
    Ok((
        PolicyBundle {
            old: current.clone(),
            current,
            reference,
        },
        doc.gen,
    ))
}

pub fn save_checkpoint(bundle: &PolicyBundle, gen: &GenConfig, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(bundle, gen))?;
    Ok(())
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<(PolicyBundle, GenConfig)> {
    checkpoint_from_string(&std::fs::read_to_string(path)?)
}
