//! Samplers for the trained model and the image/sample file writers.
//!
//! Every sampler produces visible decoder means. Batch sampler row `i` draws
//! from `rng.substream(i)`, and the single-sample functions are row 0 of a
//! batch of one, so seeds mean the same thing everywhere.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::inference::{infer_batch, InferenceConfig, INFERENCE_CHUNK_ROWS};
use crate::model::{feedback_batch, NetworkParams};
use crate::rng::RandomSource;
use crate::scalar::Scalar;
use crate::training::{corrupt, CorruptionSpec};

/// Stream tags under each sample's stream.
const STREAM_PRIOR: u64 = 0;
const STREAM_CHAIN: u64 = 2;
/// Refinement noise lives under its own root, above any sample index.
const REFINE_ROOT: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateConfig {
    /// Rounds of `{ inference on x; x <- g_1(h_1) }` after the ancestral draw.
    pub refinement_steps: usize,
    /// Top-down weight used by the refinement inference calls.
    pub refinement_alpha: f64,
    /// Inference settings for refinement; `top_down` is replaced by `refinement_alpha`.
    pub inference: InferenceConfig,
    /// Transitions of the joint denoising-auto-encoder chain.
    pub chain_steps: usize,
    /// Corrupt every layer before each chain transition.
    pub inject_noise: bool,
    /// Per-layer corruption for the chain (`h^(1)..h^(M)`; the visible layer uses the first).
    pub corruption: Vec<CorruptionSpec>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            refinement_steps: 3,
            refinement_alpha: 0.3,
            inference: InferenceConfig::default(),
            chain_steps: 3,
            inject_noise: true,
            corruption: vec![
                CorruptionSpec::Gaussian { std: 0.3 },
                CorruptionSpec::BernoulliSpikeAvg { samples: 3 },
            ],
        }
    }
}

impl GenerateConfig {
    pub fn refinement_inference(&self) -> InferenceConfig {
        InferenceConfig {
            top_down: self.refinement_alpha,
            record_trace: false,
            ..self.inference.clone()
        }
    }
}

/// `count` ancestral draws `h_M ~ p(h_M)` and the top layer of each, descended
/// through the feedback maps.
fn ancestral<T: Scalar>(
    params: &NetworkParams<T>,
    count: usize,
    rng: &RandomSource,
) -> Result<(Array2<T>, crate::model::LatentBatch<T>)> {
    let prior = params.require_prior()?;
    let mut top = Array2::zeros((count, prior.dim()));
    for (i, mut row) in top.rows_mut().into_iter().enumerate() {
        row.assign(&prior.sample(&mut rng.substream(i as u64).substream(STREAM_PRIOR)));
    }
    let (latent, x) = feedback_batch(params, top.view())?;
    Ok((x, latent))
}

/// Draws from the directed model `p(x | h_1) ... p(h_M)`, returning the visible means.
pub fn sample_directed_batch<T: Scalar>(params: &NetworkParams<T>, count: usize, rng: &RandomSource) -> Result<Array2<T>> {
    Ok(ancestral(params, count, rng)?.0)
}

pub fn sample_directed<T: Scalar>(params: &NetworkParams<T>, rng: &RandomSource) -> Result<Array1<T>> {
    Ok(sample_directed_batch(params, 1, rng)?.row(0).to_owned())
}

/// Ancestral draw followed by `refinement_steps` rounds of inference on the
/// current visible vector and re-decoding `x <- g_1(h_1)`.
pub fn generate_batch<T: Scalar>(
    params: &NetworkParams<T>,
    count: usize,
    cfg: &GenerateConfig,
    rng: &RandomSource,
) -> Result<Array2<T>> {
    let mut x = sample_directed_batch(params, count, rng)?;
    let inference = cfg.refinement_inference();
    for round in 0..cfg.refinement_steps {
        let round_rng = rng.substream(REFINE_ROOT).substream(round as u64);
        let (h, _) = infer_batch(params, x.view(), &inference, &round_rng)?;
        x = params.pair(1).feedback.apply_batch(h.h[0].view())?;
    }
    Ok(x)
}

pub fn generate<T: Scalar>(params: &NetworkParams<T>, cfg: &GenerateConfig, rng: &RandomSource) -> Result<Array1<T>> {
    Ok(generate_batch(params, 1, cfg, rng)?.row(0).to_owned())
}

fn corrupt_rows<T: Scalar>(
    h: &Array2<T>,
    spec: &CorruptionSpec,
    rngs: &mut [RandomSource],
) -> Result<Array2<T>> {
    let mut out = h.clone();
    let probabilities = matches!(spec, CorruptionSpec::BernoulliSpikeAvg { .. });
    for ((mut row, src), rng) in out.rows_mut().into_iter().zip(h.rows()).zip(rngs.iter_mut()) {
        let src = if probabilities {
            src.mapv(|v| v.max(T::zero()).min(T::one()))
        } else {
            src.to_owned()
        };
        row.assign(&corrupt(src.view(), spec, rng)?);
    }
    Ok(out)
}

/// Runs the chain on a block of rows with one stream per row.
fn chain_rows<T: Scalar>(
    params: &NetworkParams<T>,
    mut x: Array2<T>,
    mut h: Vec<Array2<T>>,
    steps: usize,
    cfg: &GenerateConfig,
    rngs: &mut [RandomSource],
) -> Result<Array2<T>> {
    let m = params.depth();
    for _ in 0..steps {
        // Corrupt the whole joint state (x, h_1..h_M) first.
        let (x_tilde, h_tilde) = if cfg.inject_noise {
            let x_tilde = corrupt_rows(&x, &cfg.corruption[0], rngs)?;
            let h_tilde = h
                .iter()
                .enumerate()
                .map(|(k, hk)| corrupt_rows(hk, &cfg.corruption[k], rngs))
                .collect::<Result<Vec<_>>>()?;
            (x_tilde, h_tilde)
        } else {
            (x.clone(), h.clone())
        };

        let mut next = Vec::with_capacity(m);
        for k in 1..=m {
            let below = if k == 1 { x_tilde.view() } else { h_tilde[k - 2].view() };
            let from_below = params.pair(k).feedforward.apply_batch(below)?;
            if k == m {
                next.push(from_below);
                continue;
            }
            // Middle layers: reconstruct from above or from below with probability 1/2 each.
            let from_above = params.pair(k + 1).feedback.apply_batch(h_tilde[k].view())?;
            let mut chosen = from_below;
            for ((mut row, above), rng) in chosen.rows_mut().into_iter().zip(from_above.rows()).zip(rngs.iter_mut()) {
                if rng.bernoulli(0.5) {
                    row.assign(&above);
                }
            }
            next.push(chosen);
        }
        x = params.pair(1).feedback.apply_batch(h_tilde[0].view())?;
        h = next;
    }
    Ok(x)
}

/// Joint denoising-auto-encoder Markov chain over `(x, h_1..h_M)`, started
/// from an ancestral sample. Each transition corrupts the state (when
/// `inject_noise`), re-encodes the top layer from below, re-decodes `x` from
/// `h~_1`, and refreshes each middle layer from above or below at random.
pub fn sample_joint_dae_chain_batch<T: Scalar>(
    params: &NetworkParams<T>,
    count: usize,
    steps: usize,
    cfg: &GenerateConfig,
    rng: &RandomSource,
) -> Result<Array2<T>> {
    check_len("chain corruption spec count", params.depth(), cfg.corruption.len())?;
    cfg.corruption.iter().try_for_each(CorruptionSpec::validate)?;
    let (x, latent) = ancestral(params, count, rng)?;
    if count == 0 || steps == 0 {
        return Ok(x);
    }
    let starts: Vec<usize> = (0..count).step_by(INFERENCE_CHUNK_ROWS).collect();
    let pieces = starts
        .par_iter()
        .map(|&start| {
            let end = (start + INFERENCE_CHUNK_ROWS).min(count);
            let xs = x.slice(s![start..end, ..]).to_owned();
            let hs = latent.h.iter().map(|m| m.slice(s![start..end, ..]).to_owned()).collect();
            let mut rngs: Vec<RandomSource> = (start..end)
                .map(|i| rng.substream(i as u64).substream(STREAM_CHAIN))
                .collect();
            chain_rows(params, xs, hs, steps, cfg, &mut rngs)
        })
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = pieces.iter().map(|p| p.view()).collect();
    concatenate(Axis(0), &views).map_err(|e| Error::invalid(e.to_string()))
}

pub fn sample_joint_dae_chain<T: Scalar>(
    params: &NetworkParams<T>,
    steps: usize,
    cfg: &GenerateConfig,
    rng: &RandomSource,
) -> Result<Array1<T>> {
    Ok(sample_joint_dae_chain_batch(params, 1, steps, cfg, rng)?.row(0).to_owned())
}

/// 8-bit gray level of a pixel: clamp to `[0, 1]`, scale by 255, round half to even.
pub fn quantize(value: f64) -> u8 {
    let v = if value.is_nan() { 0.0 } else { value.clamp(0.0, 1.0) };
    (v * 255.0).round_ties_even() as u8
}

/// Binary PGM (P5, maxval 255) tiling `samples` row-major into a
/// `rows x cols` grid of `image_shape` images.
pub fn encode_sample_grid<T: Scalar>(
    samples: ArrayView2<T>,
    rows: usize,
    cols: usize,
    image_shape: (usize, usize),
) -> Result<Vec<u8>> {
    if rows * cols != samples.nrows() {
        return Err(Error::invalid(format!(
            "a {rows}x{cols} grid needs {} samples, got {}",
            rows * cols,
            samples.nrows()
        )));
    }
    let (ih, iw) = image_shape;
    check_len("sample length vs image shape", ih * iw, samples.ncols())?;
    let (height, width) = (rows * ih, cols * iw);
    let mut pixels = vec![0u8; height * width];
    for (n, sample) in samples.rows().into_iter().enumerate() {
        let (gr, gc) = (n / cols, n % cols);
        for (p, &v) in sample.iter().enumerate() {
            let (r, c) = (gr * ih + p / iw, gc * iw + p % iw);
            pixels[r * width + c] = quantize(v.as_f64());
        }
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    Ok(out)
}

pub fn render_sample_grid<T: Scalar>(
    samples: ArrayView2<T>,
    rows: usize,
    cols: usize,
    image_shape: (usize, usize),
    path: impl AsRef<Path>,
) -> Result<()> {
    let bytes = encode_sample_grid(samples, rows, cols, image_shape)?;
    let path = path.as_ref();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Near-square grid shape for `count` samples: `rows x cols` with `cols = ceil(sqrt(count))`
/// when that divides evenly, otherwise a single row.
pub fn grid_shape(count: usize) -> (usize, usize) {
    let side = (count as f64).sqrt().ceil() as usize;
    if side > 0 && count % side == 0 {
        (count / side, side)
    } else {
        (1, count)
    }
}

/// Raw sample file: little-endian `u32` count, `u32` dimension, then
/// `count * dim` little-endian `f64` values.
pub fn encode_raw_samples<T: Scalar>(samples: ArrayView2<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * samples.len());
    out.extend_from_slice(&(samples.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(samples.ncols() as u32).to_le_bytes());
    for v in samples.iter() {
        out.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    out
}

pub fn decode_raw_samples<T: Scalar>(bytes: &[u8]) -> Result<Array2<T>> {
    if bytes.len() < 8 {
        return Err(Error::Length {
            what: "raw sample header".into(),
            expected: 8,
            found: bytes.len(),
        });
    }
    let count = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
    let dim = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let payload = &bytes[8..];
    if payload.len() != 8 * count * dim {
        return Err(Error::Length {
            what: "raw sample payload".into(),
            expected: 8 * count * dim,
            found: payload.len(),
        });
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
        .collect();
    Array2::from_shape_vec((count, dim), values).map_err(|e| Error::invalid(e.to_string()))
}

pub fn write_raw_samples<T: Scalar>(samples: ArrayView2<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&encode_raw_samples(samples)).map_err(|e| Error::io(path, e))
}

pub fn read_raw_samples<T: Scalar>(path: impl AsRef<Path>) -> Result<Array2<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raw_samples(&bytes)
}
