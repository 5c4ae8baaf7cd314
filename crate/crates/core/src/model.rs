//! Layered directed generative model: feedforward (recognition) maps `f_k`
//! from layer `k-1` to `k`, feedback (generative) maps `g_k` from `k` back to
//! `k-1`, and an optional diagonal Gaussian prior over the top layer.
//!
//! Batched operations take one example per row.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::activation::Activation;
use crate::error::{check_len, Error, Result};
use crate::rng::RandomSource;
use crate::scalar::Scalar;

/// Smallest variance a fitted prior may hold.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// One affine map followed by an elementwise activation: `act(W u + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMap<T> {
    /// `(output_dim, input_dim)`.
    pub weight: Array2<T>,
    pub bias: Array1<T>,
    pub activation: Activation,
}

impl<T: Scalar> LayerMap<T> {
    pub fn new(weight: Array2<T>, bias: Array1<T>, activation: Activation) -> Result<Self> {
        check_len("bias length vs weight rows", weight.nrows(), bias.len())?;
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn zeros(output_dim: usize, input_dim: usize, activation: Activation) -> Self {
        Self {
            weight: Array2::zeros((output_dim, input_dim)),
            bias: Array1::zeros(output_dim),
            activation,
        }
    }

    /// Uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot(output_dim: usize, input_dim: usize, activation: Activation, rng: &mut RandomSource) -> Self {
        let limit = (6.0 / (input_dim + output_dim) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((output_dim, input_dim), || {
            T::lit((2.0 * rng.uniform() - 1.0) * limit)
        });
        Self {
            weight,
            bias: Array1::zeros(output_dim),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn pre_activation_batch(&self, input: ArrayView2<T>) -> Result<Array2<T>> {
        check_len("layer input width", self.input_dim(), input.ncols())?;
        let mut pre = input.dot(&self.weight.t());
        pre += &self.bias;
        Ok(pre)
    }

    pub fn apply_batch(&self, input: ArrayView2<T>) -> Result<Array2<T>> {
        let mut out = self.pre_activation_batch(input)?;
        self.activation.apply_inplace(&mut out);
        Ok(out)
    }

    pub fn apply(&self, input: ArrayView1<T>) -> Result<Array1<T>> {
        check_len("layer input length", self.input_dim(), input.len())?;
        let mut out = self.weight.dot(&input);
        out += &self.bias;
        self.activation.apply_inplace(&mut out);
        Ok(out)
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// The feedforward map `f_k` and feedback map `g_k` between layers `k-1` and `k`.
/// The two maps have independent weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerPair<T> {
    pub feedforward: LayerMap<T>,
    pub feedback: LayerMap<T>,
}

impl<T: Scalar> LayerPair<T> {
    pub fn new(feedforward: LayerMap<T>, feedback: LayerMap<T>) -> Result<Self> {
        check_len("feedback output vs feedforward input", feedforward.input_dim(), feedback.output_dim())?;
        check_len("feedback input vs feedforward output", feedforward.output_dim(), feedback.input_dim())?;
        Ok(Self { feedforward, feedback })
    }

    pub fn below_dim(&self) -> usize {
        self.feedforward.input_dim()
    }

    pub fn dim(&self) -> usize {
        self.feedforward.output_dim()
    }
}

/// Diagonal Gaussian over the top hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior<T> {
    pub mean: Array1<T>,
    pub variance: Array1<T>,
}

impl<T: Scalar> GaussianPrior<T> {
    /// Builds a prior, raising every variance to at least [`VARIANCE_FLOOR`].
    pub fn new(mean: Array1<T>, variance: Array1<T>) -> Result<Self> {
        check_len("prior variance length", mean.len(), variance.len())?;
        if mean.iter().chain(variance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("prior statistics must be finite"));
        }
        let floor = T::lit(VARIANCE_FLOOR);
        let variance = variance.mapv(|v| if v < floor { floor } else { v });
        Ok(Self { mean, variance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample(&self, rng: &mut RandomSource) -> Array1<T> {
        Array1::from_shape_fn(self.dim(), |i| {
            let std = self.variance[i].sqrt();
            self.mean[i] + std * T::lit(rng.standard_normal())
        })
    }

    pub fn log_density(&self, h: ArrayView1<T>) -> Result<T> {
        check_len("prior input", self.dim(), h.len())?;
        let two_pi = T::lit(2.0 * std::f64::consts::PI);
        let half = T::lit(0.5);
        let mut acc = T::zero();
        for ((&v, &m), &var) in h.iter().zip(self.mean.iter()).zip(self.variance.iter()) {
            let d = v - m;
            acc = acc - half * (d * d / var + (two_pi * var).ln());
        }
        Ok(acc)
    }
}

/// Layer widths and activations of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    /// `d_0 .. d_M`, visible layer first.
    pub widths: Vec<usize>,
    /// Activation of `f_k` for `k = 1..=M`.
    pub feedforward: Vec<Activation>,
    /// Activation of `g_k` for `k = 1..=M`; `g_1` produces the visible mean.
    pub feedback: Vec<Activation>,
}

impl Architecture {
    /// 784-1000-100 with softplus/sigmoid hidden units and a sigmoid visible decoder.
    pub fn mnist() -> Self {
        Self {
            widths: vec![784, 1000, 100],
            feedforward: vec![Activation::Softplus, Activation::Sigmoid],
            feedback: vec![Activation::Sigmoid, Activation::Softplus],
        }
    }

    pub fn depth(&self) -> usize {
        self.widths.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::invalid("a network needs at least one hidden layer"));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        check_len("feedforward activation count", self.depth(), self.feedforward.len())?;
        check_len("feedback activation count", self.depth(), self.feedback.len())?;
        Ok(())
    }
}

/// Learnable state of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    /// `layers[k-1]` holds `(f_k, g_k)`.
    pub layers: Vec<LayerPair<T>>,
    pub prior: Option<GaussianPrior<T>>,
    /// Seed the parameters were initialized and trained with.
    pub seed: u64,
}

impl<T: Scalar> NetworkParams<T> {
    pub fn new(layers: Vec<LayerPair<T>>, prior: Option<GaussianPrior<T>>, seed: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("a network needs at least one layer pair"));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            check_len(&format!("width of hidden layer {}", k + 1), pair[0].dim(), pair[1].below_dim())?;
        }
        let params = Self { layers, prior, seed };
        if let Some(prior) = &params.prior {
            check_len("prior dimension", params.top_dim(), prior.dim())?;
        }
        Ok(params)
    }

    /// Glorot-initialized network drawn from `RandomSource::new(seed)`.
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = RandomSource::new(seed);
        let layers = (1..=arch.depth())
            .map(|k| {
                let (below, here) = (arch.widths[k - 1], arch.widths[k]);
                let f = LayerMap::glorot(here, below, arch.feedforward[k - 1], &mut rng);
                let g = LayerMap::glorot(below, here, arch.feedback[k - 1], &mut rng);
                LayerPair::new(f, g)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers, None, seed)
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            widths: self.widths(),
            feedforward: self.layers.iter().map(|l| l.feedforward.activation).collect(),
            feedback: self.layers.iter().map(|l| l.feedback.activation).collect(),
        }
    }

    /// Number of hidden layers `M`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.visible_dim())
            .chain(self.layers.iter().map(LayerPair::dim))
            .collect()
    }

    pub fn visible_dim(&self) -> usize {
        self.layers[0].below_dim()
    }

    pub fn top_dim(&self) -> usize {
        self.layers[self.depth() - 1].dim()
    }

    /// Pair `(f_k, g_k)` for 1-based `k`.
    pub fn pair(&self, k: usize) -> &LayerPair<T> {
        &self.layers[k - 1]
    }

    pub fn require_prior(&self) -> Result<&GaussianPrior<T>> {
        self.prior
            .as_ref()
            .ok_or_else(|| Error::State("the top-level prior has not been fitted".into()))
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.feedforward.is_finite() && l.feedback.is_finite())
            && self
                .prior
                .as_ref()
                .is_none_or(|p| p.mean.iter().chain(p.variance.iter()).all(|v| v.is_finite()))
    }
}

/// Hidden-layer values `h^(1) .. h^(M)` for a single example.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState<T> {
    pub h: Vec<Array1<T>>,
}

impl<T: Scalar> LatentState<T> {
    pub fn top(&self) -> &Array1<T> {
        self.h.last().expect("latent state has at least one layer")
    }
}

/// Hidden-layer values for a batch of examples, one example per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatch<T> {
    pub h: Vec<Array2<T>>,
}

impl<T: Scalar> LatentBatch<T> {
    pub fn len(&self) -> usize {
        self.h.first().map_or(0, |m| m.nrows())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> LatentState<T> {
        LatentState {
            h: self.h.iter().map(|m| m.row(i).to_owned()).collect(),
        }
    }

    pub fn from_rows(rows: &[LatentState<T>]) -> Result<Self> {
        let first = rows.first().ok_or_else(|| Error::invalid("empty latent batch"))?;
        let h = (0..first.h.len())
            .map(|k| {
                let views: Vec<_> = rows.iter().map(|r| r.h[k].view()).collect();
                ndarray::stack(Axis(0), &views).map_err(|e| Error::invalid(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { h })
    }

    pub fn top(&self) -> &Array2<T> {
        self.h.last().expect("latent batch has at least one layer")
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Self {
            h: self.h.iter().map(|m| m.slice(s![start..end, ..]).to_owned()).collect(),
        }
    }

    pub(crate) fn check(&self, params: &NetworkParams<T>, rows: usize) -> Result<()> {
        check_len("latent layer count", params.depth(), self.h.len())?;
        for (k, m) in self.h.iter().enumerate() {
            check_len(&format!("width of h{}", k + 1), params.layers[k].dim(), m.ncols())?;
            check_len(&format!("rows of h{}", k + 1), rows, m.nrows())?;
        }
        Ok(())
    }
}

/// `h^(k) = f_k(h^(k-1))` with `h^(0) = x`.
pub fn feedforward_batch<T: Scalar>(params: &NetworkParams<T>, x: ArrayView2<T>) -> Result<LatentBatch<T>> {
    check_len("visible width", params.visible_dim(), x.ncols())?;
    let mut h: Vec<Array2<T>> = Vec::with_capacity(params.depth());
    for pair in &params.layers {
        let below = h.last().map_or(x, |m| m.view());
        let next = pair.feedforward.apply_batch(below)?;
        h.push(next);
    }
    Ok(LatentBatch { h })
}

pub fn feedforward_pass<T: Scalar>(params: &NetworkParams<T>, x: ArrayView1<T>) -> Result<LatentState<T>> {
    check_len("visible length", params.visible_dim(), x.len())?;
    let batch = feedforward_batch(params, x.insert_axis(Axis(0)))?;
    Ok(batch.row(0))
}

/// Descends from the top layer with the feedback maps, returning every layer
/// (the top one included, unchanged) and the visible mean `g_1(h^(1))`.
pub fn feedback_batch<T: Scalar>(
    params: &NetworkParams<T>,
    h_top: ArrayView2<T>,
) -> Result<(LatentBatch<T>, Array2<T>)> {
    check_len("top-layer width", params.top_dim(), h_top.ncols())?;
    let m = params.depth();
    let mut h: Vec<Array2<T>> = vec![Array2::zeros((0, 0)); m];
    h[m - 1] = h_top.to_owned();
    for k in (1..m).rev() {
        h[k - 1] = params.pair(k + 1).feedback.apply_batch(h[k].view())?;
    }
    let x = params.pair(1).feedback.apply_batch(h[0].view())?;
    Ok((LatentBatch { h }, x))
}

pub fn feedback_pass<T: Scalar>(
    params: &NetworkParams<T>,
    h_top: ArrayView1<T>,
) -> Result<(LatentState<T>, Array1<T>)> {
    check_len("top-layer length", params.top_dim(), h_top.len())?;
    let (batch, x) = feedback_batch(params, h_top.insert_axis(Axis(0)))?;
    Ok((batch.row(0), x.row(0).to_owned()))
}

/// Row-wise `log N(target; mean, I)`.
pub(crate) fn unit_gaussian_log_density_rows<T: Scalar>(target: ArrayView2<T>, mean: ArrayView2<T>) -> Array1<T> {
    let d = target.ncols() as f64;
    let constant = T::lit(-0.5 * d * (2.0 * std::f64::consts::PI).ln());
    let half = T::lit(0.5);
    let mut out = Array1::zeros(target.nrows());
    for ((t, m), o) in target.rows().into_iter().zip(mean.rows()).zip(out.iter_mut()) {
        let sq = t.iter().zip(m.iter()).fold(T::zero(), |acc, (&a, &b)| {
            let d = a - b;
            acc + d * d
        });
        *o = constant - half * sq;
    }
    out
}

/// Per-example `log p(x, h)` under unit-variance Gaussian conditionals,
/// `sum_k log N(h^(k-1); g_k(h^(k)), I)`, plus `log p(h^(M))` when
/// `include_prior` is set.
pub fn joint_log_likelihood_batch<T: Scalar>(
    params: &NetworkParams<T>,
    x: ArrayView2<T>,
    h: &LatentBatch<T>,
    include_prior: bool,
) -> Result<Array1<T>> {
    check_len("visible width", params.visible_dim(), x.ncols())?;
    h.check(params, x.nrows())?;
    let prior = if include_prior {
        Some(params.require_prior()?)
    } else {
        None
    };
    let mut total = Array1::zeros(x.nrows());
    for (k, pair) in params.layers.iter().enumerate() {
        let below = if k == 0 { x } else { h.h[k - 1].view() };
        let mean = pair.feedback.apply_batch(h.h[k].view())?;
        total += &unit_gaussian_log_density_rows(below, mean.view());
    }
    if let Some(prior) = prior {
        for (row, t) in h.top().rows().into_iter().zip(total.iter_mut()) {
            *t = *t + prior.log_density(row)?;
        }
    }
    Ok(total)
}

pub fn joint_log_likelihood<T: Scalar>(
    params: &NetworkParams<T>,
    x: ArrayView1<T>,
    h: &LatentState<T>,
    include_prior: bool,
) -> Result<T> {
    check_len("visible length", params.visible_dim(), x.len())?;
    let batch = LatentBatch {
        h: h.h.iter().map(|v| v.view().insert_axis(Axis(0)).to_owned()).collect(),
    };
    Ok(joint_log_likelihood_batch(params, x.insert_axis(Axis(0)), &batch, include_prior)?[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1, Array2};

    fn identity_map(d: usize) -> LayerMap<f64> {
        LayerMap::new(Array2::eye(d), Array1::zeros(d), Activation::Linear).unwrap()
    }

    fn random_params(widths: &[usize], seed: u64) -> NetworkParams<f64> {
        let arch = Architecture {
            widths: widths.to_vec(),
            feedforward: vec![Activation::Softplus; widths.len() - 1],
            feedback: std::iter::once(Activation::Sigmoid)
                .chain(std::iter::repeat_n(Activation::Softplus, widths.len() - 2))
                .collect(),
        };
        let mut p = NetworkParams::init(&arch, seed).unwrap();
        let mut rng = RandomSource::new(seed ^ 0xABCD);
        for l in p.layers.iter_mut() {
            l.feedforward.bias.mapv_inplace(|_| rng.standard_normal() * 0.1);
            l.feedback.bias.mapv_inplace(|_| rng.standard_normal() * 0.1);
        }
        p
    }

    /// Naive re-composition of `act(W u + b)` with explicit loops.
    fn naive_apply(map: &LayerMap<f64>, u: &[f64]) -> Vec<f64> {
        (0..map.output_dim())
            .map(|i| {
                let mut acc = map.bias[i];
                for (j, &uj) in u.iter().enumerate() {
                    acc += map.weight[[i, j]] * uj;
                }
                map.activation.apply_scalar(acc)
            })
            .collect()
    }

    #[test]
    fn matvec_matches_triple_loop() {
        let mut rng = RandomSource::new(3);
        let a: Array2<f64> = rng.normal_array((32, 32), 1.0).unwrap();
        let b: Array2<f64> = rng.normal_array((32, 32), 1.0).unwrap();
        let fast = a.dot(&b);
        for i in 0..32 {
            for j in 0..32 {
                let mut acc = 0.0;
                for k in 0..32 {
                    acc += a[[i, k]] * b[[k, j]];
                }
                assert!((fast[[i, j]] - acc).abs() <= 1e-10 * acc.abs().max(1.0));
            }
        }
    }

    #[test]
    fn zero_network_propagates_constants() {
        let layers = vec![
            LayerPair::new(LayerMap::zeros(3, 4, Activation::Softplus), LayerMap::zeros(4, 3, Activation::Sigmoid)).unwrap(),
            LayerPair::new(
                LayerMap::new(Array2::zeros((2, 3)), array![0.5, -1.0], Activation::Sigmoid).unwrap(),
                LayerMap::zeros(3, 2, Activation::Softplus),
            )
            .unwrap(),
        ];
        let params = NetworkParams::new(layers, None, 0).unwrap();
        let h = feedforward_pass(&params, array![0.2, 0.9, 0.0, 1.0].view()).unwrap();
        assert!(h.h[0].iter().all(|&v| (v - std::f64::consts::LN_2).abs() < 1e-15));
        assert_eq!(h.h[1], array![crate::activation::sigmoid_scalar(0.5), crate::activation::sigmoid_scalar(-1.0)]);
        let (_, x) = feedback_pass(&params, array![3.0, -2.0].view()).unwrap();
        assert!(x.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn identity_maps_pass_through() {
        let pair = LayerPair::new(identity_map(3), identity_map(3)).unwrap();
        let params = NetworkParams::new(vec![pair], None, 0).unwrap();
        let x = array![0.1, -2.0, 7.5];
        assert_eq!(feedforward_pass(&params, x.view()).unwrap().h[0], x);
        assert_eq!(feedback_pass(&params, x.view()).unwrap().1, x);
    }

    #[test]
    fn passes_match_naive_composition() {
        let params = random_params(&[784, 1000, 100], 11);
        let mut rng = RandomSource::new(12);
        let x: Array1<f64> = rng.uniform_array(784);
        let h = feedforward_pass(&params, x.view()).unwrap();
        let h1 = naive_apply(&params.pair(1).feedforward, x.as_slice().unwrap());
        let h2 = naive_apply(&params.pair(2).feedforward, &h1);
        for (a, b) in h.h[0].iter().zip(&h1).chain(h.h[1].iter().zip(&h2)) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
        }

        let top: Array1<f64> = rng.uniform_array(100);
        let (down, x_mean) = feedback_pass(&params, top.view()).unwrap();
        let d1 = naive_apply(&params.pair(2).feedback, top.as_slice().unwrap());
        let d0 = naive_apply(&params.pair(1).feedback, &d1);
        assert_eq!(down.h[1], top);
        for (a, b) in down.h[0].iter().zip(&d1).chain(x_mean.iter().zip(&d0)) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
        }
    }

    #[test]
    fn shape_errors() {
        let params = random_params(&[5, 4, 3], 1);
        assert!(matches!(
            feedforward_pass(&params, Array1::zeros(6).view()),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(feedback_pass(&params, Array1::zeros(4).view()).is_err());
        assert!(LayerPair::new(LayerMap::<f64>::zeros(4, 5, Activation::Linear), LayerMap::zeros(4, 4, Activation::Linear)).is_err());
        let bad_chain = vec![
            LayerPair::new(LayerMap::<f64>::zeros(4, 5, Activation::Linear), LayerMap::zeros(5, 4, Activation::Linear)).unwrap(),
            LayerPair::new(LayerMap::zeros(2, 3, Activation::Linear), LayerMap::zeros(3, 2, Activation::Linear)).unwrap(),
        ];
        assert!(NetworkParams::new(bad_chain, None, 0).is_err());
    }

    /// Perfect reconstruction at every layer leaves only the normalizers.
    fn perfectly_reconstructed(params: &NetworkParams<f64>, top: &Array1<f64>) -> (Array1<f64>, LatentState<f64>) {
        let (h, x) = feedback_pass(params, top.view()).unwrap();
        (x, h)
    }

    #[test]
    fn joint_ll_of_perfect_reconstruction() {
        let params = random_params(&[784, 1000, 100], 2);
        let top = Array1::from_elem(100, 0.3);
        let (x, h) = perfectly_reconstructed(&params, &top);
        let ll = joint_log_likelihood(&params, x.view(), &h, false).unwrap();
        let expected = -(784.0 + 1000.0) / 2.0 * (2.0 * std::f64::consts::PI).ln();
        assert!((ll - expected).abs() < 1e-9, "{ll} vs {expected}");

        let mut shifted = x.clone();
        shifted[17] += 1.0;
        let ll2 = joint_log_likelihood(&params, shifted.view(), &h, false).unwrap();
        assert!((ll2 - (expected - 0.5)).abs() < 1e-9);
    }

    #[test]
    fn joint_ll_matches_direct_density_product() {
        let params = random_params(&[6, 5, 3], 4);
        let mut rng = RandomSource::new(8);
        let x: Array1<f64> = rng.uniform_array(6);
        let h = LatentState {
            h: vec![rng.uniform_array(5), rng.uniform_array(3)],
        };
        let mut p = params.clone();
        p.prior = Some(GaussianPrior::new(array![0.1, 0.5, -0.2], array![0.3, 1.5, 0.7]).unwrap());

        // Product of univariate normal densities, then log.
        let normal = |v: f64, m: f64, var: f64| (-(v - m).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
        let g1 = naive_apply(&p.pair(1).feedback, h.h[0].as_slice().unwrap());
        let g2 = naive_apply(&p.pair(2).feedback, h.h[1].as_slice().unwrap());
        let mut density = 1.0;
        for i in 0..6 {
            density *= normal(x[i], g1[i], 1.0);
        }
        for i in 0..5 {
            density *= normal(h.h[0][i], g2[i], 1.0);
        }
        let without_prior = density.ln();
        let prior = p.prior.as_ref().unwrap();
        for i in 0..3 {
            density *= normal(h.h[1][i], prior.mean[i], prior.variance[i]);
        }
        let ll = joint_log_likelihood(&p, x.view(), &h, false).unwrap();
        assert!((ll - without_prior).abs() < 1e-8);
        let ll = joint_log_likelihood(&p, x.view(), &h, true).unwrap();
        assert!((ll - density.ln()).abs() < 1e-8);

        assert!(matches!(
            joint_log_likelihood(&params, x.view(), &h, true),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn joint_ll_is_invariant_to_hidden_unit_permutation() {
        let params = random_params(&[7, 6, 4], 21);
        let mut rng = RandomSource::new(22);
        let x: Array1<f64> = rng.uniform_array(7);
        let h = LatentState {
            h: vec![rng.uniform_array(6), rng.uniform_array(4)],
        };
        let perm = [3usize, 0, 5, 1, 4, 2];
        let mut p = params.clone();
        let l1 = &mut p.layers[0];
        l1.feedforward.weight = params.layers[0].feedforward.weight.select(Axis(0), &perm);
        l1.feedforward.bias = params.layers[0].feedforward.bias.select(Axis(0), &perm);
        l1.feedback.weight = params.layers[0].feedback.weight.select(Axis(1), &perm);
        let l2 = &mut p.layers[1];
        l2.feedforward.weight = params.layers[1].feedforward.weight.select(Axis(1), &perm);
        l2.feedback.weight = params.layers[1].feedback.weight.select(Axis(0), &perm);
        l2.feedback.bias = params.layers[1].feedback.bias.select(Axis(0), &perm);
        let hp = LatentState {
            h: vec![h.h[0].select(Axis(0), &perm), h.h[1].clone()],
        };
        let a = joint_log_likelihood(&params, x.view(), &h, false).unwrap();
        let b = joint_log_likelihood(&p, x.view(), &hp, false).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn prior_floor_and_sampling() {
        let prior = GaussianPrior::new(array![1.0, 2.0], array![0.0, 4.0]).unwrap();
        assert_eq!(prior.variance, array![VARIANCE_FLOOR, 4.0]);
        let s = prior.sample(&mut RandomSource::new(1));
        assert!((s[0] - 1.0).abs() < 0.01);
        assert!(GaussianPrior::new(array![1.0], array![1.0, 2.0]).is_err());
    }

    #[test]
    fn init_is_glorot_scaled_and_seeded() {
        let a = NetworkParams::<f64>::init(&Architecture::mnist(), 5).unwrap();
        let b = NetworkParams::<f64>::init(&Architecture::mnist(), 5).unwrap();
        assert_eq!(a, b);
        let limit = (6.0f64 / 1784.0).sqrt();
        assert!(a.pair(1).feedforward.weight.iter().all(|w| w.abs() <= limit));
        assert!(a.pair(1).feedforward.bias.iter().all(|&b| b == 0.0));
        assert_eq!(a.widths(), vec![784, 1000, 100]);
        assert_eq!(a.architecture(), Architecture::mnist());
    }

    #[test]
    fn f32_network_agrees_with_f64() {
        let p64 = random_params(&[10, 8, 4], 9);
        let cast = |m: &LayerMap<f64>| LayerMap::new(m.weight.mapv(|v| v as f32), m.bias.mapv(|v| v as f32), m.activation).unwrap();
        let layers = p64
            .layers
            .iter()
            .map(|l| LayerPair::new(cast(&l.feedforward), cast(&l.feedback)).unwrap())
            .collect();
        let p32 = NetworkParams::new(layers, None, 9).unwrap();
        let x: Array1<f64> = RandomSource::new(1).uniform_array(10);
        let a = feedforward_pass(&p64, x.view()).unwrap();
        let b = feedforward_pass(&p32, x.mapv(|v| v as f32).view()).unwrap();
        for (u, v) in a.h[1].iter().zip(b.h[1].iter()) {
            assert!((u - *v as f64).abs() < 1e-5);
        }
    }
}
