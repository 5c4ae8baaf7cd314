//! Iterative latent-state improvement driven by the difference-targetprop
//! estimator `f(u) - f(g(h))`, which stands in for `d log p(u | h) / dh`
//! without propagating derivatives through `g`.
//!
//! One sweep updates the layers top-down. Hidden layer `k` moves by
//! `step_size * (f_k(h^(k-1)) - f_k(g_k(h^(k))))` and, below the top, also
//! by `top_down * (g_{k+1}(h^(k+1)) - h^(k))`, where `h^(k+1)` has already
//! been updated in the current sweep.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::model::{feedforward_batch, joint_log_likelihood_batch, LatentBatch, LatentState, LayerMap, NetworkParams};
use crate::rng::RandomSource;
use crate::scalar::Scalar;

/// Rows per work unit for batched inference. Fixed so that results do not
/// depend on how many threads process the units.
pub const INFERENCE_CHUNK_ROWS: usize = 32;

/// Root stream of the per-round inference noise in [`inpaint_batch`].
const INPAINT_ROOT: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceConfig {
    /// Number of sweeps `N`.
    pub steps: usize,
    /// Targetprop step size `δ`; absorbs the `1/σ²_h` factor.
    pub step_size: f64,
    /// Weight `α` of the top-down pull `g_{k+1}(h^(k+1)) - h^(k)`.
    pub top_down: f64,
    /// Standard deviation of noise added after each layer update (0 = MAP).
    pub noise_std: f64,
    pub record_trace: bool,
    /// Add `log p(h^(M))` to the trace; needs a fitted prior.
    pub trace_prior: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            steps: 15,
            step_size: 0.1,
            top_down: 0.001,
            noise_std: 0.0,
            record_trace: false,
            trace_prior: false,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size >= 0.0) || !self.step_size.is_finite() {
            return Err(Error::invalid(format!("inference step size must be >= 0, got {}", self.step_size)));
        }
        if !self.top_down.is_finite() {
            return Err(Error::invalid("inference top-down weight must be finite"));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::invalid(format!("inference noise std must be >= 0, got {}", self.noise_std)));
        }
        Ok(())
    }
}

/// Joint log-likelihood before the first sweep and after each sweep; the
/// prior term is included only with [`InferenceConfig::trace_prior`].
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceTrace<T> {
    pub joint_ll: Vec<T>,
}

/// Per-example traces for a batch, shape `(examples, steps + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchTrace<T> {
    pub joint_ll: Array2<T>,
}

impl<T: Scalar> BatchTrace<T> {
    /// Mean over examples at every step.
    pub fn mean_curve(&self) -> Vec<f64> {
        self.joint_ll
            .columns()
            .into_iter()
            .map(|c| c.iter().map(|v| v.as_f64()).sum::<f64>() / c.len() as f64)
            .collect()
    }

    /// Standard error of the mean at every step.
    pub fn std_err_curve(&self) -> Vec<f64> {
        let n = self.joint_ll.nrows() as f64;
        self.joint_ll
            .columns()
            .into_iter()
            .map(|c| {
                let mean = c.iter().map(|v| v.as_f64()).sum::<f64>() / n;
                let var = c.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
                (var / n).sqrt()
            })
            .collect()
    }

    pub fn row(&self, i: usize) -> InferenceTrace<T> {
        InferenceTrace {
            joint_ll: self.joint_ll.row(i).to_vec(),
        }
    }
}

/// Which visible entries are observed (`true`) and therefore clamped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisibilityMask {
    pub visible: Vec<bool>,
}

impl VisibilityMask {
    pub fn all_visible(len: usize) -> Self {
        Self { visible: vec![true; len] }
    }

    pub fn all_missing(len: usize) -> Self {
        Self { visible: vec![false; len] }
    }

    /// Each entry is independently missing with probability `missing_fraction`.
    pub fn random(len: usize, missing_fraction: f64, rng: &mut RandomSource) -> Self {
        Self {
            visible: (0..len).map(|_| !rng.bernoulli(missing_fraction)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.visible.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visible.is_empty()
    }

    pub fn missing_count(&self) -> usize {
        self.visible.iter().filter(|v| !**v).count()
    }

    /// Observed values where visible, `fill` elsewhere.
    pub fn compose<T: Scalar>(&self, observed: ArrayView1<T>, fill: ArrayView1<T>) -> Array1<T> {
        Array1::from_shape_fn(self.len(), |i| if self.visible[i] { observed[i] } else { fill[i] })
    }
}

/// `f(u) - f(g(h))` for a batch.
pub fn targetprop_delta_batch<T: Scalar>(
    f: &LayerMap<T>,
    g: &LayerMap<T>,
    input_below: ArrayView2<T>,
    h: ArrayView2<T>,
) -> Result<Array2<T>> {
    check_pair(f, g)?;
    let up = f.apply_batch(input_below)?;
    let recon = f.apply_batch(g.apply_batch(h)?.view())?;
    Ok(up - recon)
}

/// Targetprop estimate of `d log p(input_below | h) / dh`, up to a positive scale.
pub fn targetprop_delta<T: Scalar>(
    f: &LayerMap<T>,
    g: &LayerMap<T>,
    input_below: ArrayView1<T>,
    h: ArrayView1<T>,
) -> Result<Array1<T>> {
    check_len("targetprop input length", f.input_dim(), input_below.len())?;
    check_len("targetprop state length", g.input_dim(), h.len())?;
    let d = targetprop_delta_batch(f, g, input_below.insert_axis(Axis(0)), h.insert_axis(Axis(0)))?;
    Ok(d.row(0).to_owned())
}

fn check_pair<T: Scalar>(f: &LayerMap<T>, g: &LayerMap<T>) -> Result<()> {
    check_len("g output vs f input", f.input_dim(), g.output_dim())?;
    check_len("g input vs f output", f.output_dim(), g.input_dim())
}

/// Visibility masks for a block of rows: one shared mask or one per row.
#[derive(Clone, Copy)]
enum Clamp<'a> {
    Shared(&'a VisibilityMask),
    PerRow(&'a [VisibilityMask]),
}

impl<'a> Clamp<'a> {
    fn row(&self, i: usize) -> &'a VisibilityMask {
        match *self {
            Clamp::Shared(m) => m,
            Clamp::PerRow(m) => &m[i],
        }
    }

    fn rows(&self, start: usize, end: usize) -> Clamp<'a> {
        match *self {
            Clamp::Shared(m) => Clamp::Shared(m),
            Clamp::PerRow(m) => Clamp::PerRow(&m[start..end]),
        }
    }
}

/// Runs the sweeps on `h` in place for the rows in `x`, one noise stream per row.
/// With a mask, the bottom-up term of `h^(1)` uses `compose(x_visible, g_1(h^(1)))`.
fn sweep_rows<T: Scalar>(
    params: &NetworkParams<T>,
    x: ArrayView2<T>,
    mask: Option<Clamp<'_>>,
    h: &mut LatentBatch<T>,
    cfg: &InferenceConfig,
    rngs: &mut [RandomSource],
) -> Result<Option<Array2<T>>> {
    let n = x.nrows();
    let m = params.depth();
    let delta = T::lit(cfg.step_size);
    let alpha = T::lit(cfg.top_down);

    let mut trace = if cfg.record_trace {
        let mut t = Array2::zeros((n, cfg.steps + 1));
        t.column_mut(0).assign(&joint_log_likelihood_batch(params, x, h, cfg.trace_prior)?);
        Some(t)
    } else {
        None
    };
    // f_1(x) never changes when nothing is clamped.
    let f1_of_x = match mask {
        None => Some(params.pair(1).feedforward.apply_batch(x)?),
        Some(_) => None,
    };

    for step in 1..=cfg.steps {
        for k in (1..=m).rev() {
            let pair = params.pair(k);
            let reconstruction = pair.feedback.apply_batch(h.h[k - 1].view())?;
            let up = if k > 1 {
                pair.feedforward.apply_batch(h.h[k - 2].view())?
            } else if let Some(f1x) = &f1_of_x {
                f1x.clone()
            } else {
                let mask = mask.expect("mask present when f1(x) is not cached");
                let composite = compose_rows(x, mask, reconstruction.view());
                pair.feedforward.apply_batch(composite.view())?
            };
            let down = pair.feedforward.apply_batch(reconstruction.view())?;

            let mut update = up - down;
            update.mapv_inplace(|v| v * delta);
            if k < m && cfg.top_down != 0.0 {
                let from_above = params.pair(k + 1).feedback.apply_batch(h.h[k].view())?;
                Zip::from(&mut update)
                    .and(&from_above)
                    .and(&h.h[k - 1])
                    .for_each(|u, &a, &cur| *u = *u + alpha * (a - cur));
            }
            h.h[k - 1] += &update;

            if cfg.noise_std > 0.0 {
                let width = h.h[k - 1].ncols();
                for (mut row, rng) in h.h[k - 1].rows_mut().into_iter().zip(rngs.iter_mut()) {
                    let noise: Array1<T> = rng.normal_array(width, cfg.noise_std)?;
                    row += &noise;
                }
            }
        }
        if let Some(t) = trace.as_mut() {
            t.column_mut(step).assign(&joint_log_likelihood_batch(params, x, h, cfg.trace_prior)?);
        }
    }
    Ok(trace)
}

fn check_batch<T: Scalar>(params: &NetworkParams<T>, x: ArrayView2<T>, cfg: &InferenceConfig) -> Result<()> {
    cfg.validate()?;
    check_len("visible width", params.visible_dim(), x.ncols())
}

/// Batched inference: feedforward initialization followed by `cfg.steps`
/// targetprop sweeps. Row `i` draws its noise from `rng.substream(i)`, and rows
/// are processed in fixed-size chunks in parallel, so the result is identical
/// for any thread count.
pub fn infer_batch<T: Scalar>(
    params: &NetworkParams<T>,
    x: ArrayView2<T>,
    cfg: &InferenceConfig,
    rng: &RandomSource,
) -> Result<(LatentBatch<T>, Option<BatchTrace<T>>)> {
    check_batch(params, x, cfg)?;
    run_chunked(params, x, None, None, cfg, rng)
}

/// Like [`infer_batch`] but continuing from a caller-provided state instead
/// of the feedforward initialization.
pub fn infer_batch_from<T: Scalar>(
    params: &NetworkParams<T>,
    x: ArrayView2<T>,
    init: &LatentBatch<T>,
    cfg: &InferenceConfig,
    rng: &RandomSource,
) -> Result<(LatentBatch<T>, Option<BatchTrace<T>>)> {
    check_batch(params, x, cfg)?;
    init.check(params, x.nrows())?;
    run_chunked(params, x, None, Some(init), cfg, rng)
}

/// Batched clamped inference sharing one visibility mask across rows.
/// Returns the final state and the filled-in visible vectors.
pub fn infer_clamped_batch<T: Scalar>(
    params: &NetworkParams<T>,
    x_partial: ArrayView2<T>,
    mask: &VisibilityMask,
    cfg: &InferenceConfig,
    rng: &RandomSource,
) -> Result<(LatentBatch<T>, Array2<T>)> {
    check_batch(params, x_partial, cfg)?;
    check_len("visibility mask length", params.visible_dim(), mask.len())?;
    let (h, _) = run_chunked(params, x_partial, Some(Clamp::Shared(mask)), None, cfg, rng)?;
    let filled = fill_missing(params, x_partial, Clamp::Shared(mask), &h)?;
    Ok((h, filled))
}

fn fill_missing<T: Scalar>(
    params: &NetworkParams<T>,
    x: ArrayView2<T>,
    mask: Clamp<'_>,
    h: &LatentBatch<T>,
) -> Result<Array2<T>> {
    let decoded = params.pair(1).feedback.apply_batch(h.h[0].view())?;
    Ok(compose_rows(x, mask, decoded.view()))
}

/// Row-wise [`VisibilityMask::compose`].
fn compose_rows<T: Scalar>(x: ArrayView2<T>, mask: Clamp<'_>, fill: ArrayView2<T>) -> Array2<T> {
    let mut out = x.to_owned();
    for (i, (mut row, g)) in out.rows_mut().into_iter().zip(fill.rows()).enumerate() {
        for ((v, &g), &visible) in row.iter_mut().zip(g.iter()).zip(mask.row(i).visible.iter()) {
            if !visible {
                *v = g;
            }
        }
    }
    out
}

fn run_chunked<T: Scalar>(
    params: &NetworkParams<T>,
    x: ArrayView2<T>,
    mask: Option<Clamp<'_>>,
    init: Option<&LatentBatch<T>>,
    cfg: &InferenceConfig,
    rng: &RandomSource,
) -> Result<(LatentBatch<T>, Option<BatchTrace<T>>)> {
    let n = x.nrows();
    if n == 0 {
        let h = params.layers.iter().map(|l| Array2::zeros((0, l.dim()))).collect();
        let trace = cfg.record_trace.then(|| BatchTrace {
            joint_ll: Array2::zeros((0, cfg.steps + 1)),
        });
        return Ok((LatentBatch { h }, trace));
    }
    let starts: Vec<usize> = (0..n).step_by(INFERENCE_CHUNK_ROWS).collect();
    let pieces = starts
        .par_iter()
        .map(|&start| {
            let end = (start + INFERENCE_CHUNK_ROWS).min(n);
            let xs = x.slice(s![start..end, ..]);
            let mut h = match init {
                Some(init) => init.slice_rows(start, end),
                None => feedforward_batch(params, xs)?,
            };
            let mut rngs: Vec<RandomSource> = (start..end).map(|i| rng.substream(i as u64)).collect();
            let trace = sweep_rows(params, xs, mask.map(|m| m.rows(start, end)), &mut h, cfg, &mut rngs)?;
            Ok((h, trace))
        })
        .collect::<Result<Vec<_>>>()?;

    let depth = params.depth();
    let h = (0..depth)
        .map(|k| {
            let views: Vec<_> = pieces.iter().map(|(h, _)| h.h[k].view()).collect();
            concatenate(Axis(0), &views).map_err(|e| Error::invalid(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let trace = if cfg.record_trace {
        let views: Vec<_> = pieces
            .iter()
            .map(|(_, t)| t.as_ref().expect("trace recorded").view())
            .collect();
        Some(BatchTrace {
            joint_ll: concatenate(Axis(0), &views).map_err(|e| Error::invalid(e.to_string()))?,
        })
    } else {
        None
    };
    Ok((LatentBatch { h }, trace))
}

/// Single-example inference; noise is drawn directly from `rng`.
pub fn infer<T: Scalar>(
    params: &NetworkParams<T>,
    x: ArrayView1<T>,
    cfg: &InferenceConfig,
    rng: &mut RandomSource,
) -> Result<(LatentState<T>, InferenceTrace<T>)> {
    check_len("visible length", params.visible_dim(), x.len())?;
    cfg.validate()?;
    let xs = x.insert_axis(Axis(0));
    let mut h = feedforward_batch(params, xs)?;
    let traced = InferenceConfig {
        record_trace: true,
        ..cfg.clone()
    };
    let trace = sweep_rows(params, xs, None, &mut h, &traced, std::slice::from_mut(rng))?
        .expect("trace requested");
    Ok((
        h.row(0),
        InferenceTrace {
            joint_ll: trace.row(0).to_vec(),
        },
    ))
}

/// Single-example clamped inference. `x_partial` holds observed values where
/// `mask` is true and the caller's initial guesses elsewhere.
pub fn infer_clamped<T: Scalar>(
    params: &NetworkParams<T>,
    x_partial: ArrayView1<T>,
    mask: &VisibilityMask,
    cfg: &InferenceConfig,
    rng: &mut RandomSource,
) -> Result<(LatentState<T>, Array1<T>)> {
    check_len("visible length", params.visible_dim(), x_partial.len())?;
    check_len("visibility mask length", params.visible_dim(), mask.len())?;
    cfg.validate()?;
    let xs = x_partial.insert_axis(Axis(0));
    let mut h = feedforward_batch(params, xs)?;
    let untraced = InferenceConfig {
        record_trace: false,
        ..cfg.clone()
    };
    sweep_rows(params, xs, Some(Clamp::Shared(mask)), &mut h, &untraced, std::slice::from_mut(rng))?;
    let filled = fill_missing(params, xs, Clamp::Shared(mask), &h)?;
    Ok((h.row(0), filled.row(0).to_owned()))
}

/// Result of [`inpaint_batch`]; row `i` of every array belongs to example `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Inpainting<T> {
    pub masks: Vec<VisibilityMask>,
    /// Observed pixels with the missing ones replaced by uniform noise.
    pub corrupted: Array2<T>,
    pub filled: Array2<T>,
    /// Mean squared error on the missing pixels, before the first iteration
    /// and after each one; zero for examples with nothing missing.
    pub missing_mse: Array2<f64>,
}

impl<T> Inpainting<T> {
    /// Examples whose final missing-pixel error is below the initial one.
    pub fn improved_count(&self) -> usize {
        let last = self.missing_mse.ncols() - 1;
        self.missing_mse.rows().into_iter().filter(|r| r[last] < r[0]).count()
    }

    pub fn mean_mse_curve(&self) -> Vec<f64> {
        self.missing_mse
            .mean_axis(Axis(0))
            .map_or_else(|| vec![0.0; self.missing_mse.ncols()], |m| m.to_vec())
    }
}

fn missing_mse<T: Scalar>(mask: &VisibilityMask, truth: ArrayView1<T>, guess: ArrayView1<T>) -> f64 {
    let missing = mask.missing_count();
    if missing == 0 {
        return 0.0;
    }
    let sum: f64 = mask
        .visible
        .iter()
        .zip(truth.iter().zip(guess.iter()))
        .filter(|(v, _)| !**v)
        .map(|(_, (&a, &b))| (a.as_f64() - b.as_f64()).powi(2))
        .sum();
    sum / missing as f64
}

/// In-painting: for each row, hide a random `missing_fraction` of the pixels,
/// replace them with uniform noise and run `iterations` rounds of clamped
/// inference, each round starting from the previous round's filled-in
/// vector. Row `i` draws its mask and initial noise from `rng.substream(i)`;
/// inference noise of round `t` comes from a separate per-round root.
pub fn inpaint_batch<T: Scalar>(
    params: &NetworkParams<T>,
    images: ArrayView2<T>,
    missing_fraction: f64,
    iterations: usize,
    cfg: &InferenceConfig,
    rng: &RandomSource,
) -> Result<Inpainting<T>> {
    check_batch(params, images, cfg)?;
    if !(0.0..=1.0).contains(&missing_fraction) {
        return Err(Error::invalid(format!("missing fraction must lie in [0, 1], got {missing_fraction}")));
    }
    let (n, d) = images.dim();
    let mut masks = Vec::with_capacity(n);
    let mut corrupted = Array2::zeros((n, d));
    for (i, mut row) in corrupted.rows_mut().into_iter().enumerate() {
        let mut r = rng.substream(i as u64);
        let mask = VisibilityMask::random(d, missing_fraction, &mut r);
        let noise: Array1<T> = r.uniform_array(d);
        row.assign(&mask.compose(images.row(i), noise.view()));
        masks.push(mask);
    }
    let errors = |guess: &Array2<T>| -> Vec<f64> {
        (0..n).map(|i| missing_mse(&masks[i], images.row(i), guess.row(i))).collect()
    };

    let cfg = InferenceConfig {
        record_trace: false,
        ..cfg.clone()
    };
    let mut mse = Array2::zeros((n, iterations + 1));
    mse.column_mut(0).assign(&Array1::from(errors(&corrupted)));
    let mut current = corrupted.clone();
    for t in 0..iterations {
        let round = rng.substream(INPAINT_ROOT).substream(t as u64);
        let clamp = Clamp::PerRow(&masks);
        let (h, _) = run_chunked(params, current.view(), Some(clamp), None, &cfg, &round)?;
        current = fill_missing(params, current.view(), clamp, &h)?;
        mse.column_mut(t + 1).assign(&Array1::from(errors(&current)));
    }
    Ok(Inpainting {
        masks,
        corrupted,
        filled: current,
        missing_mse: mse,
    })
}
