//! Parzen-window (isotropic Gaussian KDE) log-likelihood of a test set under
//! a cloud of generated samples.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::scalar::Scalar;

/// Test rows evaluated per work unit.
const TEST_CHUNK_ROWS: usize = 128;

/// Default bandwidth grid for validation-based selection.
pub const DEFAULT_BANDWIDTHS: [f64; 5] = [0.1, 0.15, 0.2, 0.25, 0.3];

#[derive(Debug, Clone, PartialEq)]
pub struct ParzenModel {
    /// One kernel center per row.
    pub centers: Array2<f64>,
    pub sigma: f64,
    center_sq_norms: Array1<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParzenResult {
    pub n_centers: usize,
    pub sigma: f64,
    pub mean_ll: f64,
    pub std_err: f64,
}

impl ParzenResult {
    pub const CSV_HEADER: &'static str = "n_centers,sigma,mean_ll,std_err";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.n_centers, self.sigma, self.mean_ll, self.std_err)
    }
}

pub fn parzen_fit<T: Scalar>(samples: ArrayView2<T>, sigma: f64) -> Result<ParzenModel> {
    if samples.nrows() == 0 || samples.ncols() == 0 {
        return Err(Error::invalid("Parzen estimator needs at least one non-empty sample"));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("Parzen bandwidth must be > 0, got {sigma}")));
    }
    let centers = samples.mapv(Scalar::as_f64);
    let center_sq_norms = centers.map_axis(Axis(1), |r| r.dot(&r));
    Ok(ParzenModel {
        centers,
        sigma,
        center_sq_norms,
    })
}

impl ParzenModel {
    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }

    pub fn len(&self) -> usize {
        self.centers.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-point `log (1/n) sum_j N(x; c_j, σ² I)`, via a max-shifted log-sum-exp.
    pub fn log_densities<T: Scalar>(&self, test: ArrayView2<T>) -> Result<Array1<f64>> {
        check_len("Parzen test dimension", self.dim(), test.ncols())?;
        let test = test.mapv(Scalar::as_f64);
        let d = self.dim() as f64;
        let var = self.sigma * self.sigma;
        let constant = -(self.len() as f64).ln() - 0.5 * d * (2.0 * std::f64::consts::PI * var).ln();
        let starts: Vec<usize> = (0..test.nrows()).step_by(TEST_CHUNK_ROWS).collect();
        let pieces: Vec<Vec<f64>> = starts
            .par_iter()
            .map(|&start| {
                let end = (start + TEST_CHUNK_ROWS).min(test.nrows());
                let block = test.slice(s![start..end, ..]);
                let cross = block.dot(&self.centers.t());
                block
                    .rows()
                    .into_iter()
                    .zip(cross.rows())
                    .map(|(x, dots)| {
                        let x_sq = x.dot(&x);
                        let exps: Vec<f64> = dots
                            .iter()
                            .zip(self.center_sq_norms.iter())
                            .map(|(&xc, &cc)| -(x_sq + cc - 2.0 * xc).max(0.0) / (2.0 * var))
                            .collect();
                        log_sum_exp(&exps) + constant
                    })
                    .collect()
            })
            .collect();
        Ok(pieces.concat().into())
    }
}

/// `ln sum_i exp(v_i)` without overflow or underflow of the largest term.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean log-density over `test` and its standard error.
pub fn parzen_log_likelihood<T: Scalar>(model: &ParzenModel, test: ArrayView2<T>) -> Result<ParzenResult> {
    if test.nrows() == 0 {
        return Err(Error::invalid("Parzen evaluation needs at least one test point"));
    }
    let ll = model.log_densities(test)?;
    let n = ll.len() as f64;
    let mean = ll.sum() / n;
    let std_err = if ll.len() > 1 {
        (ll.mapv(|v| (v - mean).powi(2)).sum() / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    Ok(ParzenResult {
        n_centers: model.len(),
        sigma: model.sigma,
        mean_ll: mean,
        std_err,
    })
}

/// Candidate bandwidth with the highest mean validation log-likelihood.
/// Ties keep the earlier candidate.
pub fn parzen_select_bandwidth<T: Scalar>(
    samples: ArrayView2<T>,
    validation: ArrayView2<T>,
    candidates: &[f64],
) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::invalid("no bandwidth candidates given"));
    }
    if validation.nrows() == 0 {
        return Err(Error::invalid("bandwidth selection needs a non-empty validation set"));
    }
    let mut best: Option<(f64, f64)> = None;
    for &sigma in candidates {
        let model = parzen_fit(samples, sigma)?;
        let ll = parzen_log_likelihood(&model, validation)?.mean_ll;
        if best.is_none_or(|(_, b)| ll > b) {
            best = Some((sigma, ll));
        }
    }
    Ok(best.expect("at least one candidate").0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;
    use ndarray::{array, Array2};

    fn half_ln_two_pi_var(d: f64, sigma: f64) -> f64 {
        0.5 * d * (2.0 * std::f64::consts::PI * sigma * sigma).ln()
    }

    #[test]
    fn single_center_evaluated_at_itself() {
        let c = Array2::from_elem((1, 784), 0.3);
        let model = parzen_fit(c.view(), 0.2).unwrap();
        let r = parzen_log_likelihood(&model, c.view()).unwrap();
        assert!((r.mean_ll + half_ln_two_pi_var(784.0, 0.2)).abs() < 1e-9, "{}", r.mean_ll);
        assert_eq!(r.std_err, 0.0);
    }

    #[test]
    fn symmetric_pair_at_origin() {
        let c = array![[0.3, -0.1, 0.2], [-0.3, 0.1, -0.2]];
        let model = parzen_fit(c.view(), 0.25).unwrap();
        let r = parzen_log_likelihood(&model, Array2::<f64>::zeros((1, 3)).view()).unwrap();
        let norm_sq = 0.09 + 0.01 + 0.04;
        let expected = -half_ln_two_pi_var(3.0, 0.25) - norm_sq / (2.0 * 0.0625);
        assert!((r.mean_ll - expected).abs() < 1e-12);
    }

    #[test]
    fn far_points_stay_finite() {
        let centers = Array2::<f64>::zeros((3, 784));
        let test = Array2::<f64>::ones((2, 784));
        let model = parzen_fit(centers.view(), 0.05).unwrap();
        let r = parzen_log_likelihood(&model, test.view()).unwrap();
        assert!(r.mean_ll.is_finite());
    }

    #[test]
    fn errors() {
        let empty = Array2::<f64>::zeros((0, 4));
        assert!(parzen_fit(empty.view(), 0.2).is_err());
        let c = Array2::<f64>::zeros((2, 4));
        assert!(parzen_fit(c.view(), 0.0).is_err());
        let model = parzen_fit(c.view(), 0.2).unwrap();
        assert!(matches!(
            parzen_log_likelihood(&model, Array2::<f64>::zeros((1, 5)).view()),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(parzen_select_bandwidth(c.view(), c.view(), &[]).is_err());
    }

    #[test]
    fn single_candidate_is_returned() {
        let c = Array2::<f64>::zeros((2, 4));
        assert_eq!(parzen_select_bandwidth(c.view(), c.view(), &[0.37]).unwrap(), 0.37);
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[-1000.0, -1000.0]) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((log_sum_exp(&[1000.0, 0.0]) - 1000.0).abs() < 1e-12);
    }

    #[test]
    fn own_centers_beat_uniform_noise() {
        let mut rng = RandomSource::new(5);
        let centers: Array2<f64> = rng.uniform_array((50, 16)).mapv(|v: f64| v * 0.2 + 0.4);
        let noise: Array2<f64> = rng.uniform_array((50, 16));
        let model = parzen_fit(centers.view(), 0.1).unwrap();
        let own = parzen_log_likelihood(&model, centers.view()).unwrap().mean_ll;
        let other = parzen_log_likelihood(&model, noise.view()).unwrap().mean_ll;
        assert!(own > other);
    }
}
