//! Variational EM training with layer-local denoising updates.
//!
//! Each minibatch runs inference to obtain `(x, h^(1), ..., h^(M))` (the
//! E-part), corrupts every layer once, and then takes one descent step per
//! layer pair on `||g_k(h~_k) - h_{k-1}||²` and `||f_k(h~_{k-1}) - h_k||²`
//! (the M-part). Gradients only pass through the layer's own activation.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use crate::error::{check_len, Error, Result};
use crate::inference::{infer_batch, InferenceConfig};
use crate::model::{joint_log_likelihood_batch, GaussianPrior, LayerMap, LayerPair, NetworkParams};
use crate::rng::RandomSource;
use crate::scalar::Scalar;

/// Inputs to the spike-average corruption may exceed `[0, 1]` by this much.
pub const PROBABILITY_TOLERANCE: f64 = 1e-9;

/// Stream tags under the training seed.
const STREAM_TRAIN: u64 = 1;
const STREAM_PRIOR: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CorruptionSpec {
    /// Additive `N(0, std²)` noise.
    Gaussian { std: f64 },
    /// Mean of `samples` Bernoulli draws with success probability equal to the input.
    BernoulliSpikeAvg { samples: usize },
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CorruptionSpec::Gaussian { std } if !(std >= 0.0) || !std.is_finite() => {
                Err(Error::invalid(format!("gaussian corruption std must be >= 0, got {std}")))
            }
            CorruptionSpec::BernoulliSpikeAvg { samples: 0 } => {
                Err(Error::invalid("spike corruption needs at least one sample"))
            }
            _ => Ok(()),
        }
    }

    fn needs_probabilities(&self) -> bool {
        matches!(self, CorruptionSpec::BernoulliSpikeAvg { .. })
    }
}

impl fmt::Display for CorruptionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorruptionSpec::Gaussian { std } => write!(f, "gaussian:{std}"),
            CorruptionSpec::BernoulliSpikeAvg { samples } => write!(f, "spike:{samples}"),
        }
    }
}

impl FromStr for CorruptionSpec {
    type Err = Error;

    /// `gaussian:<std>` or `spike:<samples>`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s
            .trim()
            .split_once(':')
            .ok_or_else(|| Error::parse("corruption", format!("expected `kind:value`, got `{s}`")))?;
        let spec = match kind {
            "gaussian" => CorruptionSpec::Gaussian {
                std: arg
                    .parse()
                    .map_err(|_| Error::parse("corruption", format!("bad std `{arg}`")))?,
            },
            "spike" => CorruptionSpec::BernoulliSpikeAvg {
                samples: arg
                    .parse()
                    .map_err(|_| Error::parse("corruption", format!("bad sample count `{arg}`")))?,
            },
            other => return Err(Error::parse("corruption", format!("unknown corruption `{other}`"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Applies `spec` to every entry of `h`, drawing from `rng` in row-major order.
pub fn corrupt_batch<T: Scalar>(h: ArrayView2<T>, spec: &CorruptionSpec, rng: &mut RandomSource) -> Result<Array2<T>> {
    spec.validate()?;
    match *spec {
        CorruptionSpec::Gaussian { std } => {
            let noise: Array2<T> = rng.normal_array(h.raw_dim(), std)?;
            Ok(&h + &noise)
        }
        CorruptionSpec::BernoulliSpikeAvg { samples } => {
            let tol = PROBABILITY_TOLERANCE;
            if let Some(bad) = h.iter().find(|v| !(v.as_f64() >= -tol && v.as_f64() <= 1.0 + tol)) {
                return Err(Error::invalid(format!(
                    "spike corruption needs probabilities in [0, 1], got {bad}"
                )));
            }
            let inv = 1.0 / samples as f64;
            Ok(h.mapv(|p| {
                let p = p.as_f64();
                let hits = (0..samples).filter(|_| rng.bernoulli(p)).count();
                T::lit(hits as f64 * inv)
            }))
        }
    }
}

pub fn corrupt<T: Scalar>(h: ArrayView1<T>, spec: &CorruptionSpec, rng: &mut RandomSource) -> Result<Array1<T>> {
    let out = corrupt_batch(h.insert_axis(Axis(0)), spec, rng)?;
    Ok(out.row(0).to_owned())
}

/// Squared-error loss of one map and its parameter gradient, both averaged
/// over the rows of the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct MapGradient<T> {
    pub loss: T,
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

/// Loss `mean_rows ||map(input) - target||²` and its gradient w.r.t. the
/// map's own weight and bias; `target` is a constant.
pub fn map_gradient<T: Scalar>(map: &LayerMap<T>, input: ArrayView2<T>, target: ArrayView2<T>) -> Result<MapGradient<T>> {
    check_len("target width", map.output_dim(), target.ncols())?;
    check_len("target rows", input.nrows(), target.nrows())?;
    let n = input.nrows();
    if n == 0 {
        return Err(Error::invalid("gradient of an empty batch"));
    }
    let pre = map.pre_activation_batch(input)?;
    let mut out = pre.clone();
    map.activation.apply_inplace(&mut out);
    let mut residual = out - &target;
    let loss = residual.iter().fold(T::zero(), |acc, &r| acc + r * r) / T::lit(n as f64);

    // d/dpre of the mean loss: 2 r act'(pre) / n
    let scale = T::lit(2.0 / n as f64);
    residual.mapv_inplace(|r| r * scale);
    map.activation.backprop_inplace(&pre, &mut residual);
    let weight = residual.t().dot(&input);
    let bias = residual.sum_axis(Axis(0));
    Ok(MapGradient { loss, weight, bias })
}

impl<T: Scalar> LayerMap<T> {
    /// `θ ← θ - lr · grad`.
    pub fn descend(&mut self, grad: &MapGradient<T>, learning_rate: f64) {
        let lr = T::lit(learning_rate);
        Zip::from(&mut self.weight)
            .and(&grad.weight)
            .for_each(|w, &g| *w = *w - lr * g);
        Zip::from(&mut self.bias).and(&grad.bias).for_each(|b, &g| *b = *b - lr * g);
    }
}

/// Gradients of both local losses of one layer pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGradients<T> {
    /// `||g(h~) - h_below||²`.
    pub feedback: MapGradient<T>,
    /// `||f(h~_below) - h||²`.
    pub feedforward: MapGradient<T>,
}

pub fn local_gradients<T: Scalar>(
    layer: &LayerPair<T>,
    h_below: ArrayView2<T>,
    h: ArrayView2<T>,
    h_below_tilde: ArrayView2<T>,
    h_tilde: ArrayView2<T>,
) -> Result<PairGradients<T>> {
    Ok(PairGradients {
        feedback: map_gradient(&layer.feedback, h_tilde, h_below)?,
        feedforward: map_gradient(&layer.feedforward, h_below_tilde, h)?,
    })
}

/// One descent step on both local reconstruction losses of `layer`, with
/// gradients averaged over the batch rows. Returns the pre-update losses.
pub fn local_layer_update_batch<T: Scalar>(
    layer: &mut LayerPair<T>,
    h_below: ArrayView2<T>,
    h: ArrayView2<T>,
    h_below_tilde: ArrayView2<T>,
    h_tilde: ArrayView2<T>,
    learning_rate: f64,
) -> Result<(T, T)> {
    let grads = local_gradients(layer, h_below, h, h_below_tilde, h_tilde)?;
    layer.feedback.descend(&grads.feedback, learning_rate);
    layer.feedforward.descend(&grads.feedforward, learning_rate);
    Ok((grads.feedback.loss, grads.feedforward.loss))
}

/// Single-example form of [`local_layer_update_batch`].
pub fn local_layer_update<T: Scalar>(
    layer: &LayerPair<T>,
    h_below: ArrayView1<T>,
    h: ArrayView1<T>,
    h_below_tilde: ArrayView1<T>,
    h_tilde: ArrayView1<T>,
    learning_rate: f64,
) -> Result<LayerPair<T>> {
    let mut updated = layer.clone();
    local_layer_update_batch(
        &mut updated,
        h_below.insert_axis(Axis(0)),
        h.insert_axis(Axis(0)),
        h_below_tilde.insert_axis(Axis(0)),
        h_tilde.insert_axis(Axis(0)),
        learning_rate,
    )?;
    Ok(updated)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub minibatch_size: usize,
    /// Learning rate `ε`.
    pub learning_rate: f64,
    pub inference: InferenceConfig,
    /// Corruption of `h^(k)` for `k = 1..=M`; the visible layer uses the first entry.
    pub corruption: Vec<CorruptionSpec>,
    pub seed: u64,
    /// Multiplier applied to the empirical top-layer variances.
    pub prior_variance_scale: f64,
    /// Fit the prior on at most this many training examples (all when `None`).
    pub prior_subsample: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            minibatch_size: 100,
            learning_rate: 0.01,
            inference: InferenceConfig::default(),
            corruption: vec![
                CorruptionSpec::Gaussian { std: 0.3 },
                CorruptionSpec::BernoulliSpikeAvg { samples: 3 },
            ],
            seed: 1234,
            prior_variance_scale: 4.0,
            prior_subsample: None,
        }
    }
}

impl TrainConfig {
    pub fn validate<T: Scalar>(&self, params: &NetworkParams<T>) -> Result<()> {
        if self.minibatch_size == 0 {
            return Err(Error::invalid("minibatch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if !(self.prior_variance_scale > 0.0) {
            return Err(Error::invalid("prior variance scale must be > 0"));
        }
        self.inference.validate()?;
        check_len("corruption spec count", params.depth(), self.corruption.len())?;
        self.corruption.iter().try_for_each(CorruptionSpec::validate)
    }

    /// Corruption applied to layer `k`, with `k = 0` the visible layer.
    pub fn corruption_for(&self, k: usize) -> &CorruptionSpec {
        &self.corruption[k.max(1) - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerLosses {
    /// Mean per-example `||g_k(h~_k) - h_{k-1}||²`.
    pub g_loss: f64,
    /// Mean per-example `||f_k(h~_{k-1}) - h_k||²`.
    pub f_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// One entry per layer pair, bottom first.
    pub layers: Vec<LayerLosses>,
    /// Mean joint log-likelihood (prior excluded) after inference.
    pub joint_ll: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainMetrics {
    pub epochs: Vec<EpochMetrics>,
}

impl TrainMetrics {
    pub const CSV_HEADER: &'static str = "epoch,layer,g_loss,f_loss,joint_ll";

    /// One row per epoch and layer; layers are 1-based.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for e in &self.epochs {
            for (k, l) in e.layers.iter().enumerate() {
                out.push_str(&format!("{},{},{:e},{:e},{:e}\n", e.epoch, k + 1, l.g_loss, l.f_loss, e.joint_ll));
            }
        }
        out
    }
}

/// Runs `cfg.epochs` epochs of inference + local updates over `images`.
/// The top-level prior is left untouched; see [`fit_top_prior`].
pub fn train<T: Scalar>(
    images: ArrayView2<T>,
    mut params: NetworkParams<T>,
    cfg: &TrainConfig,
) -> Result<(NetworkParams<T>, TrainMetrics)> {
    let metrics = train_with(images, &mut params, cfg, |_, _| Ok(()))?;
    Ok((params, metrics))
}

/// [`train`] with a hook called after every epoch, e.g. for checkpointing.
pub fn train_with<T, F>(
    images: ArrayView2<T>,
    params: &mut NetworkParams<T>,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainMetrics>
where
    T: Scalar,
    F: FnMut(&EpochMetrics, &NetworkParams<T>) -> Result<()>,
{
    if images.nrows() == 0 {
        return Err(Error::invalid("training set is empty"));
    }
    check_len("visible width", params.visible_dim(), images.ncols())?;
    cfg.validate(params)?;

    let root = RandomSource::new(cfg.seed).substream(STREAM_TRAIN);
    let mut metrics = TrainMetrics::default();
    for epoch in 0..cfg.epochs {
        let epoch_rng = root.substream(epoch as u64);
        let batches = crate::data::minibatch_indices(images.nrows(), cfg.minibatch_size, cfg.seed, epoch as u64);
        let mut sums = vec![(0.0f64, 0.0f64); params.depth()];
        let mut ll_sum = 0.0;
        for (b, idx) in batches.iter().enumerate() {
            let x = images.select(Axis(0), idx);
            let batch_rng = epoch_rng.substream(b as u64);
            let (latent, _) = infer_batch(params, x.view(), &cfg.inference, &batch_rng.substream(0))?;
            ll_sum += joint_log_likelihood_batch(params, x.view(), &latent, false)?
                .iter()
                .map(|v| v.as_f64())
                .sum::<f64>();

            // Layer 0 is x; every layer is corrupted once and reused as input
            // for both maps that read it.
            let mut corruption_rng = batch_rng.substream(1);
            let clean: Vec<ArrayView2<T>> = std::iter::once(x.view()).chain(latent.h.iter().map(|m| m.view())).collect();
            let corrupted = clean
                .iter()
                .enumerate()
                .map(|(k, h)| {
                    let spec = cfg.corruption_for(k);
                    let h = clamp_to_probabilities(spec, *h);
                    corrupt_batch(h.view(), spec, &mut corruption_rng)
                })
                .collect::<Result<Vec<_>>>()?;

            let rows = idx.len() as f64;
            for (k, layer) in params.layers.iter_mut().enumerate() {
                let (g_loss, f_loss) = local_layer_update_batch(
                    layer,
                    clean[k],
                    clean[k + 1],
                    corrupted[k].view(),
                    corrupted[k + 1].view(),
                    cfg.learning_rate,
                )?;
                sums[k].0 += g_loss.as_f64() * rows;
                sums[k].1 += f_loss.as_f64() * rows;
            }
        }
        if !params.is_finite() {
            return Err(Error::State(format!("parameters diverged during epoch {epoch}")));
        }
        let n = images.nrows() as f64;
        let record = EpochMetrics {
            epoch,
            layers: sums
                .iter()
                .map(|&(g, f)| LayerLosses {
                    g_loss: g / n,
                    f_loss: f / n,
                })
                .collect(),
            joint_ll: ll_sum / n,
        };
        on_epoch(&record, params)?;
        metrics.epochs.push(record);
    }
    Ok(metrics)
}

/// Inferred top-layer states may drift slightly outside `[0, 1]`; spike
/// corruption treats them as firing probabilities, so they are clamped first.
fn clamp_to_probabilities<T: Scalar>(spec: &CorruptionSpec, h: ArrayView2<T>) -> Array2<T> {
    let mut out = h.to_owned();
    if spec.needs_probabilities() {
        out.mapv_inplace(|v| v.max(T::zero()).min(T::one()));
    }
    out
}

/// Diagonal Gaussian from top-layer samples (one per row): population mean,
/// population variance times `variance_scale`, floored.
pub fn prior_from_samples<T: Scalar>(h_top: ArrayView2<T>, variance_scale: f64) -> Result<GaussianPrior<T>> {
    let n = h_top.nrows();
    if n == 0 {
        return Err(Error::invalid("cannot fit a prior to zero samples"));
    }
    let mean = h_top.mean_axis(Axis(0)).expect("non-empty");
    let scale = T::lit(variance_scale);
    let variance = h_top.var_axis(Axis(0), T::zero()).mapv(|v| v * scale);
    GaussianPrior::new(mean, variance)
}

/// Infers `h^(M)` for the training examples (the first `cfg.prior_subsample`
/// of them when set), fits the Gaussian prior and stores it in `params`.
pub fn fit_top_prior<T: Scalar>(
    images: ArrayView2<T>,
    params: &mut NetworkParams<T>,
    cfg: &TrainConfig,
) -> Result<GaussianPrior<T>> {
    if images.nrows() == 0 {
        return Err(Error::invalid("training set is empty"));
    }
    let n = cfg.prior_subsample.map_or(images.nrows(), |s| s.min(images.nrows()).max(1));
    let rng = RandomSource::new(cfg.seed).substream(STREAM_PRIOR);
    let (latent, _) = infer_batch(params, images.slice(ndarray::s![..n, ..]), &cfg.inference, &rng)?;
    let prior = prior_from_samples(latent.top().view(), cfg.prior_variance_scale)?;
    params.prior = Some(prior.clone());
    Ok(prior)
}
