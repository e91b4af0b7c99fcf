//! Command-line entry point: train, eval, sample, render, corpus.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dogrpo_core::harness::{evaluate, train, RunConfig};
use dogrpo_core::policy::{load_checkpoint, sample_group};
use dogrpo_core::renderer::{export_image, render, GridDims};
use dogrpo_core::rewards::score_rollout;
use dogrpo_core::toyscene::{extract_elements, generate_prompt, write_corpus, Prompt, DIFFICULTIES};
use dogrpo_core::vocab::{tokens_from_string, tokens_to_string};

#[derive(Parser)]
#[command(name = "dogrpo", about = "Dual-objective GRPO on a toy text+grid task")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run training from a JSON config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on held-out prompts.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Prompts per difficulty.
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Sample one rollout from a checkpoint for a prompt string.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Prompt surface text, e.g. "a red circle".
        #[arg(long)]
        prompt: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where to write the rendered image.
        #[arg(long, default_value = "sample.ppm")]
        out: PathBuf,
    },
    /// Render a raw image-token file to a pixmap.
    Render {
        /// File of whitespace-separated image token names.
        #[arg(long)]
        tokens: PathBuf,
        #[arg(long, default_value = "render.ppm")]
        out: PathBuf,
    },
    /// Emit a prompt corpus file.
    Corpus {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { config } => {
            let config = RunConfig::load(&config)
                .map_err(|e| anyhow::anyhow!("loading config: {e}"))?;
            let outcome = train(&config)?;
            if let Some(report) = &outcome.last_report {
                println!(
                    "trained {} iterations: objective {:.4}, format-valid {:.3}, mean R_HA {:.3}",
                    report.iteration, report.objective, report.format_valid_frac, report.mean_r_ha
                );
            } else {
                println!("trained 0 iterations: wrote initial checkpoint only");
            }
            println!("final checkpoint: {}", outcome.final_checkpoint.display());
        }
        Command::Eval { checkpoint, n, seed } => {
            let (bundle, gen) = load_checkpoint(&checkpoint)
                .map_err(|e| anyhow::anyhow!("loading {}: {e}", checkpoint.display()))?;
            let report = evaluate(&bundle, &gen, n, seed);
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Sample {
            checkpoint,
            prompt,
            seed,
            out,
        } => {
            let (bundle, gen) = load_checkpoint(&checkpoint)
                .map_err(|e| anyhow::anyhow!("loading {}: {e}", checkpoint.display()))?;
            let surface = tokens_from_string(&prompt)
                .ok_or_else(|| anyhow::anyhow!("prompt contains unknown tokens: {prompt}"))?;
            let truth = extract_elements(&surface)
                .map_err(|e| anyhow::anyhow!("prompt does not match the template grammar: {e}"))?;
            let p = Prompt { surface, truth };
            let rollout = sample_group(&bundle, &p, 1, seed, &gen).remove(0);
            println!("reasoning: {}", tokens_to_string(&rollout.text_seq));
            let grid = render(&rollout.image_seq, gen.grid)?;
            export_image(&grid, &out)?;
            let b = score_rollout(&rollout, gen.grid);
            println!("rewards: R_SA={:.3} R_SP={:.3} R_HA={:.3}", b.r_sa, b.r_sp, b.r_ha);
            println!("image written to {}", out.display());
        }
        Command::Render { tokens, out } => {
            let text = fs::read_to_string(&tokens)
                .map_err(|e| anyhow::anyhow!("reading {}: {e}", tokens.display()))?;
            let seq = tokens_from_string(&text)
                .ok_or_else(|| anyhow::anyhow!("{} contains unknown tokens", tokens.display()))?;
            let side = (seq.len() as f64).sqrt() as usize;
            if side * side != seq.len() {
                anyhow::bail!("{} image tokens do not form a square grid", seq.len());
            }
            let dims = GridDims { rows: side, cols: side };
            let grid = render(&seq, dims)?;
            export_image(&grid, &out)?;
            println!("image written to {}", out.display());
        }
        Command::Corpus { n, seed, out } => {
            let prompts: Vec<Prompt> = (0..n)
                .map(|i| {
                    let difficulty = DIFFICULTIES[i % DIFFICULTIES.len()];
                    generate_prompt(seed.wrapping_add(i as u64), difficulty)
                })
                .collect();
            let file = fs::File::create(&out)
                .map_err(|e| anyhow::anyhow!("creating {}: {e}", out.display()))?;
            write_corpus(&prompts, file)?;
            println!("wrote {} prompts to {}", n, out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse(); // clap exits with status 2 on usage errors
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
