//! Flat `key = value` run configuration shared by every command.
//!
//! Lines starting with `#` are comments. Values are applied in order, so a
//! later line (or a command-line override) wins over an earlier one.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::DEFAULT_BANDWIDTHS;
use crate::generation::GenerateConfig;
use crate::inference::InferenceConfig;
use crate::model::Architecture;
use crate::stdp::{symmetric_log_rates, StdpConfig};
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Directed,
    Refine,
    Chain,
}

impl SampleMode {
    pub fn name(self) -> &'static str {
        match self {
            SampleMode::Directed => "directed",
            SampleMode::Refine => "refine",
            SampleMode::Chain => "chain",
        }
    }
}

impl FromStr for SampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "directed" => Ok(SampleMode::Directed),
            "refine" => Ok(SampleMode::Refine),
            "chain" => Ok(SampleMode::Chain),
            other => Err(Error::parse("generate.mode", format!("unknown mode `{other}`"))),
        }
    }
}

/// Every hyperparameter of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 means all available cores.
    pub threads: usize,

    pub architecture: Architecture,
    pub inference: InferenceConfig,
    pub train: TrainConfig,
    /// Write a checkpoint every this many epochs (0 = final only).
    pub checkpoint_every: usize,
    pub generate: GenerateConfig,
    pub sample_count: usize,
    pub sample_mode: SampleMode,

    pub parzen_sigma: f64,
    pub parzen_select: bool,
    pub parzen_candidates: Vec<f64>,
    /// Evaluate on at most this many test images.
    pub parzen_max_test: usize,

    pub train_images: String,
    pub train_labels: String,
    /// Separate test file; when empty the examples left after the train and
    /// validation splits serve as the test set.
    pub test_images: String,
    pub train_n: usize,
    pub valid_n: usize,

    pub inpaint_missing_fraction: f64,
    pub inpaint_iterations: usize,
    pub inpaint_count: usize,

    pub trace_steps: usize,
    pub trace_examples: usize,

    pub stdp: StdpConfig,
    pub stdp_rate_count: usize,
    pub stdp_rate_min: f64,
    pub stdp_rate_max: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            seed: train.seed,
            threads: 0,
            architecture: Architecture::mnist(),
            inference: InferenceConfig::default(),
            checkpoint_every: 0,
            generate: GenerateConfig::default(),
            sample_count: 100,
            sample_mode: SampleMode::Refine,
            parzen_sigma: 0.2,
            parzen_select: false,
            parzen_candidates: DEFAULT_BANDWIDTHS.to_vec(),
            parzen_max_test: 10_000,
            train_images: "data/mnist/train-images-idx3-ubyte".into(),
            train_labels: String::new(),
            test_images: "data/mnist/t10k-images-idx3-ubyte".into(),
            train_n: 50_000,
            valid_n: 10_000,
            inpaint_missing_fraction: 0.5,
            inpaint_iterations: 20,
            inpaint_count: 100,
            trace_steps: 20,
            trace_examples: 10_000,
            stdp: StdpConfig::default(),
            stdp_rate_count: 12,
            stdp_rate_min: 0.02,
            stdp_rate_max: 1.0,
            train,
        }
    }
}

fn parse_num<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::parse(key, format!("cannot parse `{value}`")))
}

fn parse_list<V: FromStr>(key: &str, value: &str) -> Result<Vec<V>> {
    if value.trim().is_empty() {
        return Ok(vec![]);
    }
    value.split(',').map(|v| parse_num(key, v)).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::parse(key, format!("expected true/false, got `{other}`"))),
    }
}

fn join<V: ToString>(values: &[V]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Sets one key. Unknown keys are an error naming the key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse_num(key, v)?,
            "threads" => self.threads = parse_num(key, v)?,
            "model.widths" => self.architecture.widths = parse_list(key, v)?,
            "model.feedforward_activations" => self.architecture.feedforward = parse_list(key, v)?,
            "model.feedback_activations" => self.architecture.feedback = parse_list(key, v)?,
            "inference.steps" => self.inference.steps = parse_num(key, v)?,
            "inference.step_size" => self.inference.step_size = parse_num(key, v)?,
            "inference.top_down" => self.inference.top_down = parse_num(key, v)?,
            "inference.noise_std" => self.inference.noise_std = parse_num(key, v)?,
            "inference.trace_prior" => self.inference.trace_prior = parse_bool(key, v)?,
            "train.epochs" => self.train.epochs = parse_num(key, v)?,
            "train.minibatch_size" => self.train.minibatch_size = parse_num(key, v)?,
            "train.learning_rate" => self.train.learning_rate = parse_num(key, v)?,
            "train.corruption" => self.train.corruption = parse_list(key, v)?,
            "train.prior_variance_scale" => self.train.prior_variance_scale = parse_num(key, v)?,
            "train.prior_subsample" => {
                self.train.prior_subsample = match v {
                    "all" => None,
                    n => Some(parse_num(key, n)?),
                }
            }
            "train.checkpoint_every" => self.checkpoint_every = parse_num(key, v)?,
            "generate.count" => self.sample_count = parse_num(key, v)?,
            "generate.mode" => self.sample_mode = v.parse()?,
            "generate.refinement_steps" => self.generate.refinement_steps = parse_num(key, v)?,
            "generate.refinement_alpha" => self.generate.refinement_alpha = parse_num(key, v)?,
            "generate.chain_steps" => self.generate.chain_steps = parse_num(key, v)?,
            "generate.inject_noise" => self.generate.inject_noise = parse_bool(key, v)?,
            "generate.corruption" => self.generate.corruption = parse_list(key, v)?,
            "parzen.sigma" => self.parzen_sigma = parse_num(key, v)?,
            "parzen.select" => self.parzen_select = parse_bool(key, v)?,
            "parzen.candidates" => self.parzen_candidates = parse_list(key, v)?,
            "parzen.max_test" => self.parzen_max_test = parse_num(key, v)?,
            "data.train_images" => self.train_images = v.to_string(),
            "data.train_labels" => self.train_labels = v.to_string(),
            "data.test_images" => self.test_images = v.to_string(),
            "data.train_n" => self.train_n = parse_num(key, v)?,
            "data.valid_n" => self.valid_n = parse_num(key, v)?,
            "inpaint.missing_fraction" => self.inpaint_missing_fraction = parse_num(key, v)?,
            "inpaint.iterations" => self.inpaint_iterations = parse_num(key, v)?,
            "inpaint.count" => self.inpaint_count = parse_num(key, v)?,
            "trace.steps" => self.trace_steps = parse_num(key, v)?,
            "trace.examples" => self.trace_examples = parse_num(key, v)?,
            "stdp.threshold" => self.stdp.threshold = parse_num(key, v)?,
            "stdp.v0" => self.stdp.v0 = parse_num(key, v)?,
            "stdp.window" => self.stdp.window = parse_num(key, v)?,
            "stdp.dt" => self.stdp.dt = parse_num(key, v)?,
            "stdp.noise_std" => self.stdp.noise_std = parse_num(key, v)?,
            "stdp.learning_rate" => self.stdp.learning_rate = parse_num(key, v)?,
            "stdp.repetitions" => self.stdp.repetitions = parse_num(key, v)?,
            "stdp.rate_count" => self.stdp_rate_count = parse_num(key, v)?,
            "stdp.rate_min" => self.stdp_rate_min = parse_num(key, v)?,
            "stdp.rate_max" => self.stdp_rate_max = parse_num(key, v)?,
            other => return Err(Error::parse(other, "unknown configuration key")),
        }
        self.sync();
        Ok(())
    }

    /// Propagates shared settings into the per-module configs.
    fn sync(&mut self) {
        self.train.seed = self.seed;
        self.train.inference = self.inference.clone();
        self.generate.inference = self.inference.clone();
        self.stdp.drift_rates = symmetric_log_rates(self.stdp_rate_min, self.stdp_rate_max, self.stdp_rate_count);
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(format!("line {}", n + 1), format!("expected `key = value`, got `{line}`")))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Every key with its current value; `parse(dump())` reproduces `self`.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("threads", self.threads.to_string());
        kv("model.widths", join(&self.architecture.widths));
        kv("model.feedforward_activations", join(&self.architecture.feedforward));
        kv("model.feedback_activations", join(&self.architecture.feedback));
        kv("inference.steps", self.inference.steps.to_string());
        kv("inference.step_size", self.inference.step_size.to_string());
        kv("inference.top_down", self.inference.top_down.to_string());
        kv("inference.noise_std", self.inference.noise_std.to_string());
        kv("inference.trace_prior", self.inference.trace_prior.to_string());
        kv("train.epochs", self.train.epochs.to_string());
        kv("train.minibatch_size", self.train.minibatch_size.to_string());
        kv("train.learning_rate", self.train.learning_rate.to_string());
        kv("train.corruption", join(&self.train.corruption));
        kv("train.prior_variance_scale", self.train.prior_variance_scale.to_string());
        kv(
            "train.prior_subsample",
            self.train.prior_subsample.map_or("all".into(), |n| n.to_string()),
        );
        kv("train.checkpoint_every", self.checkpoint_every.to_string());
        kv("generate.count", self.sample_count.to_string());
        kv("generate.mode", self.sample_mode.name().into());
        kv("generate.refinement_steps", self.generate.refinement_steps.to_string());
        kv("generate.refinement_alpha", self.generate.refinement_alpha.to_string());
        kv("generate.chain_steps", self.generate.chain_steps.to_string());
        kv("generate.inject_noise", self.generate.inject_noise.to_string());
        kv("generate.corruption", join(&self.generate.corruption));
        kv("parzen.sigma", self.parzen_sigma.to_string());
        kv("parzen.select", self.parzen_select.to_string());
        kv("parzen.candidates", join(&self.parzen_candidates));
        kv("parzen.max_test", self.parzen_max_test.to_string());
        kv("data.train_images", self.train_images.clone());
        kv("data.train_labels", self.train_labels.clone());
        kv("data.test_images", self.test_images.clone());
        kv("data.train_n", self.train_n.to_string());
        kv("data.valid_n", self.valid_n.to_string());
        kv("inpaint.missing_fraction", self.inpaint_missing_fraction.to_string());
        kv("inpaint.iterations", self.inpaint_iterations.to_string());
        kv("inpaint.count", self.inpaint_count.to_string());
        kv("trace.steps", self.trace_steps.to_string());
        kv("trace.examples", self.trace_examples.to_string());
        kv("stdp.threshold", self.stdp.threshold.to_string());
        kv("stdp.v0", self.stdp.v0.to_string());
        kv("stdp.window", self.stdp.window.to_string());
        kv("stdp.dt", self.stdp.dt.to_string());
        kv("stdp.noise_std", self.stdp.noise_std.to_string());
        kv("stdp.learning_rate", self.stdp.learning_rate.to_string());
        kv("stdp.repetitions", self.stdp.repetitions.to_string());
        kv("stdp.rate_count", self.stdp_rate_count.to_string());
        kv("stdp.rate_min", self.stdp_rate_min.to_string());
        kv("stdp.rate_max", self.stdp_rate_max.to_string());
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        self.inference.validate()?;
        if self.train.corruption.len() != self.architecture.depth() {
            return Err(Error::parse("train.corruption", "need one corruption spec per hidden layer"));
        }
        if self.generate.corruption.len() != self.architecture.depth() {
            return Err(Error::parse("generate.corruption", "need one corruption spec per hidden layer"));
        }
        if !(0.0..=1.0).contains(&self.inpaint_missing_fraction) {
            return Err(Error::parse("inpaint.missing_fraction", "must lie in [0, 1]"));
        }
        self.stdp.validate()
    }
}

impl FromStr for RunConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_experiment() {
        let c = RunConfig::default();
        assert_eq!(c.inference.steps, 15);
        assert_eq!(c.inference.step_size, 0.1);
        assert_eq!(c.inference.top_down, 0.001);
        assert_eq!(c.generate.refinement_alpha, 0.3);
        assert_eq!(c.generate.refinement_steps, 3);
        assert_eq!(c.train.epochs, 20);
        assert_eq!(c.train.minibatch_size, 100);
        assert_eq!(c.architecture.widths, vec![784, 1000, 100]);
        assert_eq!(c.parzen_sigma, 0.2);
        assert_eq!(c.train.prior_variance_scale, 4.0);
        c.validate().unwrap();
    }

    #[test]
    fn dump_round_trips() {
        let mut c = RunConfig::default();
        c.set("seed", "99").unwrap();
        c.set("train.corruption", "gaussian:0.1,spike:5").unwrap();
        c.set("train.prior_subsample", "500").unwrap();
        c.set("generate.mode", "chain").unwrap();
        c.set("inference.top_down", "0.0125").unwrap();
        let again = RunConfig::parse(&c.dump()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.train.seed, 99);
    }

    #[test]
    fn comments_blank_lines_and_precedence() {
        let c = RunConfig::parse("# header\n\ntrain.epochs = 3 # trailing\ntrain.epochs=5\n").unwrap();
        assert_eq!(c.train.epochs, 5);
    }

    #[test]
    fn errors_name_the_key() {
        let err = RunConfig::parse("train.epochs = many").unwrap_err();
        assert!(err.to_string().contains("train.epochs"), "{err}");
        let err = RunConfig::parse("bogus.key = 1").unwrap_err();
        assert!(err.to_string().contains("bogus.key"), "{err}");
        let err = RunConfig::parse("no equals sign").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }
}
