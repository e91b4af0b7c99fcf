//! Python bindings: prompts, rollouts, policies, training steps, and the
//! reward oracles, exposed as the `dogrpo` extension module.

use std::path::PathBuf;
use std::str::FromStr;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use dogrpo_core::grpo::{train_step, HyperParams};
use dogrpo_core::harness::{evaluate, oracle_rollout, RunConfig};
use dogrpo_core::policy::{
    derive_rng, greedy_rollout, load_checkpoint, sample_group, save_checkpoint, GenConfig,
    PolicyBundle, PolicyConfig, PolicyParams,
};
use dogrpo_core::renderer::{render, to_ppm, GridDims};
use dogrpo_core::rewards::score_rollout;
use dogrpo_core::toyscene::{extract_elements, Difficulty};
use dogrpo_core::vocab::{tokens_from_string, tokens_to_string};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn breakdown_dict<'py>(
    py: Python<'py>,
    b: &dogrpo_core::rewards::RewardBreakdown,
) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("r_format", b.r_format)?;
    d.set_item("r_prop", b.r_prop)?;
    d.set_item("r_sa", b.r_sa)?;
    d.set_item("r_sp", b.r_sp)?;
    d.set_item("r_vqa", b.r_vqa)?;
    d.set_item("r_det", b.r_det)?;
    d.set_item("r_align", b.r_align)?;
    d.set_item("r_ha", b.r_ha)?;
    Ok(d)
}

/// A generated prompt: surface token sequence plus its ground-truth scene.
#[pyclass(from_py_object)]
#[derive(Clone)]
struct Prompt {
    inner: dogrpo_core::toyscene::Prompt,
}

#[pymethods]
impl Prompt {
    /// Parse a prompt from surface text like "two red circles left-of a blue square".
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        let surface =
            tokens_from_string(text).ok_or_else(|| value_err("unknown token in prompt"))?;
        let truth = extract_elements(&surface).map_err(value_err)?;
        Ok(Prompt {
            inner: dogrpo_core::toyscene::Prompt { surface, truth },
        })
    }

    #[getter]
    fn text(&self) -> String {
        tokens_to_string(&self.inner.surface)
    }

    /// Ground-truth scene as a JSON string.
    #[getter]
    fn scene_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.truth).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!("Prompt({:?})", self.text())
    }
}

/// Deterministically generate a prompt of the given difficulty
/// ("single", "pair", or "relational").
#[pyfunction]
fn generate_prompt(seed: u64, difficulty: &str) -> PyResult<Prompt> {
    let d = Difficulty::from_str(difficulty).map_err(value_err)?;
    Ok(Prompt {
        inner: dogrpo_core::toyscene::generate_prompt(seed, d),
    })
}

/// One decoded response: reasoning tokens plus image tokens.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct Rollout {
    inner: dogrpo_core::vocab::Rollout,
    grid: GridDims,
}

#[pymethods]
impl Rollout {
    #[getter]
    fn text(&self) -> String {
        tokens_to_string(&self.inner.text_seq)
    }

    #[getter]
    fn image_tokens(&self) -> Vec<String> {
        tokens_to_string(&self.inner.image_seq)
            .split_whitespace()
            .map(str::to_owned)
            .collect()
    }

    /// Score this rollout with the exact reward oracles.
    fn rewards<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let b = score_rollout(&self.inner, self.grid);
        breakdown_dict(py, &b)
    }

    /// Render the image tokens to a P3 pixmap string.
    fn to_ppm(&self) -> PyResult<String> {
        let grid = render(&self.inner.image_seq, self.grid).map_err(value_err)?;
        Ok(to_ppm(&grid))
    }

    fn __repr__(&self) -> String {
        format!("Rollout(text={:?})", self.text())
    }
}

/// A trainable policy bundle (current, sampling snapshot, frozen reference).
#[pyclass]
struct Policy {
    bundle: PolicyBundle,
    gen: GenConfig,
}

#[pymethods]
impl Policy {
    /// Freshly initialized policy with default architecture.
    #[new]
    fn new(seed: u64) -> Self {
        let mut rng = derive_rng(seed, "init", 0);
        let params = PolicyParams::init(PolicyConfig::default(), &mut rng);
        Policy {
            bundle: PolicyBundle::new(params),
            gen: GenConfig::default(),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (bundle, gen) =
            load_checkpoint(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(Policy { bundle, gen })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.bundle, &self.gen, &path)
            .map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.bundle.current.data.len()
    }

    /// Sample a group of rollouts under the sampling snapshot.
    fn sample(&self, prompt: &Prompt, group_size: usize, seed: u64) -> Vec<Rollout> {
        sample_group(&self.bundle, &prompt.inner, group_size, seed, &self.gen)
            .into_iter()
            .map(|inner| Rollout {
                inner,
                grid: self.gen.grid,
            })
            .collect()
    }

    /// Greedy (argmax) decoding with the current parameters.
    fn greedy(&self, prompt: &Prompt) -> Rollout {
        Rollout {
            inner: greedy_rollout(&self.bundle.current, &prompt.inner, &self.gen),
            grid: self.gen.grid,
        }
    }

    /// One optimization step over a batch of prompts; returns the step metrics.
    #[pyo3(signature = (prompts, seed, learning_rate=None))]
    fn train_step<'py>(
        &mut self,
        py: Python<'py>,
        prompts: Vec<Prompt>,
        seed: u64,
        learning_rate: Option<f64>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let mut hp = HyperParams::default();
        if let Some(lr) = learning_rate {
            hp.learning_rate = lr;
        }
        let batch: Vec<_> = prompts.into_iter().map(|p| p.inner).collect();
        let report =
            train_step(&mut self.bundle, &batch, &hp, seed, &self.gen).map_err(value_err)?;
        let json = serde_json::to_value(&report).map_err(value_err)?;
        let d = PyDict::new(py);
        for (k, v) in json.as_object().expect("report is an object") {
            match v {
                serde_json::Value::Number(n) => d.set_item(k, n.as_f64())?,
                other => d.set_item(k, other.to_string())?,
            }
        }
        Ok(d)
    }

    /// Held-out greedy evaluation; returns the report as a dict.
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        n_prompts: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let report = evaluate(&self.bundle, &self.gen, n_prompts, seed);
        let d = PyDict::new(py);
        d.set_item("n_prompts", report.n_prompts)?;
        d.set_item("format_valid_rate", report.format_valid_rate)?;
        d.set_item("detection_rate", report.detection_rate)?;
        d.set_item("vqa_rate", report.vqa_rate)?;
        let ha = PyDict::new(py);
        ha.set_item("single", report.mean_r_ha.single)?;
        ha.set_item("pair", report.mean_r_ha.pair)?;
        ha.set_item("relational", report.mean_r_ha.relational)?;
        d.set_item("mean_r_ha", ha)?;
        Ok(d)
    }
}

/// A hand-constructed perfect response for a prompt.
#[pyfunction]
fn oracle(prompt: &Prompt) -> Rollout {
    let gen = GenConfig::default();
    Rollout {
        inner: oracle_rollout(&prompt.inner, &gen),
        grid: gen.grid,
    }
}

/// Run a full training job from a JSON config file; returns the final
/// checkpoint path.
#[pyfunction]
fn run_training(config_path: PathBuf) -> PyResult<String> {
    let config = RunConfig::load(&config_path).map_err(value_err)?;
    let outcome = dogrpo_core::harness::train(&config).map_err(value_err)?;
    Ok(outcome.final_checkpoint.display().to_string())
}

#[pymodule]
fn dogrpo(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Prompt>()?;
    m.add_class::<Rollout>()?;
    m.add_class::<Policy>()?;
    m.add_function(wrap_pyfunction!(generate_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(oracle, m)?)?;
    m.add_function(wrap_pyfunction!(run_training, m)?)?;
    Ok(())
}
