//! Training/evaluation driver: run configuration, seeded prompt streams,
//! metrics and checkpoint persistence, and greedy-decoding evaluation.
//!
//! Every source of randomness is a labeled stream derived from the run
//! seed, so adding a stream never perturbs the others. Training prompt
//! seeds are forced odd and evaluation prompt seeds even, keeping the
//! held-out pool disjoint from the training corpus.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grpo::{train_step, HyperParams, StepReport};
use crate::policy::{
    derive_rng, greedy_rollout, save_checkpoint, GenConfig, PolicyBundle, PolicyConfig,
    PolicyParams,
};
use crate::renderer::{export_image, render};
use crate::rewards::{score_rollout, RewardBreakdown};
use crate::toyscene::{generate_prompt, surface_for, Difficulty, Prompt, DIFFICULTIES};
use crate::vocab::{Rollout, DESC_CLOSE, DESC_OPEN, END_TEXT, THOUGHT_CLOSE, THOUGHT_OPEN};

/// Difficulty mix proportions for the training corpus; must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusMix {
    pub single: f64,
    pub pair: f64,
    pub relational: f64,
}

impl Default for CorpusMix {
    fn default() -> Self {
        CorpusMix {
            single: 0.5,
            pair: 0.25,
            relational: 0.25,
        }
    }
}

impl CorpusMix {
    fn pick(&self, r: f64) -> Difficulty {
        if r < self.single {
            Difficulty::Single
        } else if r < self.single + self.pair {
            Difficulty::Pair
        } else {
            Difficulty::Relational
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub iterations: usize,
    pub batch_size: usize,
    pub hyperparams: HyperParams,
    pub corpus_mix: CorpusMix,
    pub output_dir: PathBuf,
    pub checkpoint_every: usize,
    pub render_samples: usize,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub gen: GenConfig,
}

impl RunConfig {
    pub fn defaults(output_dir: PathBuf) -> Self {
        RunConfig {
            seed: 17,
            iterations: 1000,
            batch_size: 8,
            hyperparams: HyperParams::default(),
            corpus_mix: CorpusMix::default(),
            output_dir,
            checkpoint_every: 100,
            render_samples: 2,
            policy: PolicyConfig::default(),
            gen: GenConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sum = self.corpus_mix.single + self.corpus_mix.pair + self.corpus_mix.relational;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Format(format!("corpus mix sums to {sum}, not 1")));
        }
        if self.batch_size == 0 || self.checkpoint_every == 0 {
            return Err(Error::Format("batch_size and checkpoint_every must be positive".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)?;
        let config: RunConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }
}

fn train_prompt(rng: &mut impl Rng, mix: &CorpusMix) -> Prompt {
    let difficulty = mix.pick(rng.gen::<f64>());
    let seed = rng.gen::<u64>() | 1; // odd: training seed space
    generate_prompt(seed, difficulty)
}

fn eval_prompt(rng: &mut impl Rng, difficulty: Difficulty) -> Prompt {
    let seed = rng.gen::<u64>() & !1; // even: held-out seed space
    generate_prompt(seed, difficulty)
}

pub struct TrainOutcome {
    pub bundle: PolicyBundle,
    pub final_checkpoint: PathBuf,
    pub metrics_path: PathBuf,
    pub last_report: Option<StepReport>,
}

/// Runs the configured number of optimization steps over freshly generated
/// prompt batches, writing one metrics line per step, checkpoints on the
/// configured cadence, and rendered greedy samples next to each checkpoint.
/// Fully reproducible from the config.
pub fn train(config: &RunConfig) -> Result<TrainOutcome> {
    config.validate()?;
    fs::create_dir_all(&config.output_dir)?;
    let renders_dir = config.output_dir.join("renders");
    fs::create_dir_all(&renders_dir)?;
    fs::write(
        config.output_dir.join("config.json"),
        serde_json::to_string_pretty(config).expect("config serializes"),
    )?;

    let mut init_rng = derive_rng(config.seed, "init", 0);
    let params = PolicyParams::init(config.policy, &mut init_rng);
    let mut bundle = PolicyBundle::new(params);

    save_checkpoint(&bundle, &config.gen, &config.output_dir.join("checkpoint_00000.json"))?;

    let metrics_path = config.output_dir.join("metrics.jsonl");
    let mut metrics = fs::File::create(&metrics_path)?;
    let mut corpus_rng = derive_rng(config.seed, "corpus", 0);
    let mut last_report = None;

    for it in 1..=config.iterations {
        let prompts: Vec<Prompt> = (0..config.batch_size)
            .map(|_| train_prompt(&mut corpus_rng, &config.corpus_mix))
            .collect();
        let step_seed = derive_rng(config.seed, "sampling", it as u64).gen::<u64>();
        let mut report = train_step(&mut bundle, &prompts, &config.hyperparams, step_seed, &config.gen)?;
        report.iteration = it;
        writeln!(metrics, "{}", serde_json::to_string(&report)?)?;
        last_report = Some(report);

        if it % config.checkpoint_every == 0 || it == config.iterations {
            save_checkpoint(
                &bundle,
                &config.gen,
                &config.output_dir.join(format!("checkpoint_{it:05}.json")),
            )?;
            render_eval_samples(&bundle, config, &renders_dir, it)?;
        }
    }

    let final_checkpoint = config.output_dir.join("checkpoint_final.json");
    save_checkpoint(&bundle, &config.gen, &final_checkpoint)?;
    Ok(TrainOutcome {
        bundle,
        final_checkpoint,
        metrics_path,
        last_report,
    })
}

fn render_eval_samples(
    bundle: &PolicyBundle,
    config: &RunConfig,
    renders_dir: &Path,
    iteration: usize,
) -> Result<()> {
    let mut rng = derive_rng(config.seed, "render", iteration as u64);
    for j in 0..config.render_samples {
        let difficulty = DIFFICULTIES[j % DIFFICULTIES.len()];
        let prompt = eval_prompt(&mut rng, difficulty);
        let rollout = greedy_rollout(&bundle.current, &prompt, &config.gen);
        let grid = render(&rollout.image_seq, config.gen.grid)?;
        export_image(
            &grid,
            &renders_dir.join(format!("iter{iteration:05}_rollout{j}.ppm")),
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ByDifficulty {
    pub single: f64,
    pub pair: f64,
    pub relational: f64,
}

impl ByDifficulty {
    pub fn get(&self, d: Difficulty) -> f64 {
        match d {
            Difficulty::Single => self.single,
            Difficulty::Pair => self.pair,
            Difficulty::Relational => self.relational,
        }
    }

    fn set(&mut self, d: Difficulty, v: f64) {
        match d {
            Difficulty::Single => self.single = v,
            Difficulty::Pair => self.pair = v,
            Difficulty::Relational => self.relational = v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_prompts: usize,
    pub mean_r_ha: ByDifficulty,
    pub format_valid_rate: f64,
    pub detection_rate: f64,
    pub vqa_rate: f64,
}

/// Aggregates reward components over `n_prompts` held-out prompts per
/// difficulty, decoding each with the supplied function.
pub fn evaluate_with<F>(mut decode: F, gen: &GenConfig, n_prompts: usize, seed: u64) -> EvalReport
where
    F: FnMut(&Prompt) -> Rollout,
{
    let mut report = EvalReport {
        n_prompts,
        ..EvalReport::default()
    };
    if n_prompts == 0 {
        return report;
    }
    let mut format_valid = 0usize;
    let mut det_sum = 0.0;
    let mut vqa_sum = 0.0;
    for difficulty in DIFFICULTIES {
        let mut rng = derive_rng(seed, "eval", difficulty as u64);
        let mut ha_sum = 0.0;
        for _ in 0..n_prompts {
            let prompt = eval_prompt(&mut rng, difficulty);
            let rollout = decode(&prompt);
            let b: RewardBreakdown = score_rollout(&rollout, gen.grid);
            ha_sum += b.r_ha;
            det_sum += b.r_det;
            vqa_sum += b.r_vqa;
            if b.r_format == 1.0 {
                format_valid += 1;
            }
        }
        report.mean_r_ha.set(difficulty, ha_sum / n_prompts as f64);
    }
    let total = (n_prompts * DIFFICULTIES.len()) as f64;
    report.format_valid_rate = format_valid as f64 / total;
    report.detection_rate = det_sum / total;
    report.vqa_rate = vqa_sum / total;
    report
}

/// Greedy (argmax) evaluation of a policy on held-out prompts.
pub fn evaluate(bundle: &PolicyBundle, gen: &GenConfig, n_prompts: usize, seed: u64) -> EvalReport {
    evaluate_with(
        |p| greedy_rollout(&bundle.current, p, gen),
        gen,
        n_prompts,
        seed,
    )
}

/// A hand-constructed perfect response: canonical tagged reasoning plus a
/// grid placement that satisfies every reward oracle exactly. Used as a
/// reference point by evaluation tests and demos. Requires the default
/// 6x6 grid.
pub fn oracle_rollout(prompt: &Prompt, gen: &GenConfig) -> Rollout {
    let surface = surface_for(&prompt.truth);
    let mut text_seq = vec![THOUGHT_OPEN];
    text_seq.extend_from_slice(&surface);
    text_seq.push(THOUGHT_CLOSE);
    text_seq.push(DESC_OPEN);
    text_seq.extend_from_slice(&surface);
    text_seq.push(DESC_CLOSE);
    text_seq.push(END_TEXT);

    let grid = perfect_grid(&prompt.truth, gen.grid);
    let image_seq = grid.to_tokens();
    let logp_old_text = vec![0.0; text_seq.len()];
    let logp_old_img = vec![0.0; image_seq.len()];
    Rollout {
        prompt: prompt.clone(),
        text_seq,
        image_seq,
        logp_old_text,
        logp_old_img,
    }
}

/// Lays a scene out on the grid so that detection, VQA, and cohesion all
/// score perfectly: each object instance is a two-cell domino (so every
/// filled cell has an identical neighbor) and instances stay 4-disjoint
/// (so component counts equal spec counts).
pub fn perfect_grid(scene: &crate::toyscene::SceneSpec, dims: crate::renderer::GridDims) -> crate::renderer::Grid {
    assert!(dims.rows >= 6 && dims.cols >= 6, "perfect layout needs a 6x6 grid");
    let mut cells = vec![None; dims.cell_count()];
    let place_vertical = |r: usize, c: usize, obj: &crate::toyscene::ObjectSpec, cells: &mut Vec<_>| {
        cells[r * dims.cols + c] = Some((obj.shape, obj.color));
        cells[(r + 1) * dims.cols + c] = Some((obj.shape, obj.color));
    };
    let place_horizontal = |r: usize, c: usize, obj: &crate::toyscene::ObjectSpec, cells: &mut Vec<_>| {
        cells[r * dims.cols + c] = Some((obj.shape, obj.color));
        cells[r * dims.cols + c + 1] = Some((obj.shape, obj.color));
    };

    if let Some(rel) = scene.relations.first() {
        // Two column (or row) bands; vertical dominoes for horizontal
        // relations and vice versa. Slot order keeps instances disjoint.
        let horizontal = matches!(
            rel.relation,
            crate::vocab::Relation::LeftOf | crate::vocab::Relation::RightOf
        );
        let subject_first = matches!(
            rel.relation,
            crate::vocab::Relation::LeftOf | crate::vocab::Relation::Above
        );
        let (first, second) = if subject_first {
            (rel.subject, rel.object)
        } else {
            (rel.object, rel.subject)
        };
        for (band, &obj_idx) in [first, second].iter().enumerate() {
            let obj = &scene.objects[obj_idx];
            for k in 0..obj.count as usize {
                if horizontal {
                    // bands are column ranges 0..3 and 3..6
                    let (r, c) = ([0usize, 0, 3][k], band * 3 + [0usize, 2, 0][k]);
                    place_vertical(r, c, obj, &mut cells);
                } else {
                    let (r, c) = (band * 3 + [0usize, 0, 2][k], [0usize, 3, 0][k]);
                    place_horizontal(r, c, obj, &mut cells);
                }
            }
        }
    } else {
        // One two-row band per object, vertical dominoes at columns 0/2/4.
        for (i, obj) in scene.objects.iter().enumerate() {
            for k in 0..obj.count as usize {
                place_vertical(2 * i, 2 * k, obj, &mut cells);
            }
        }
    }
    crate::renderer::Grid { dims, cells }
}
