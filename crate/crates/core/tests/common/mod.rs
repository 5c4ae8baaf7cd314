//! Oracles shared by the integration tests.
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use tpgen::model::LayerMap;
use tpgen::{Activation, RandomSource};

/// Orthonormal columns by modified Gram-Schmidt on a Gaussian matrix.
pub fn random_orthogonal(n: usize, rng: &mut RandomSource) -> Array2<f64> {
    let mut q: Array2<f64> = rng.normal_array((n, n), 1.0).unwrap();
    for j in 0..n {
        for k in 0..j {
            let proj = q.column(j).dot(&q.column(k));
            let qk = q.column(k).to_owned();
            q.column_mut(j).scaled_add(-proj, &qk);
        }
        let norm = q.column(j).dot(&q.column(j)).sqrt();
        q.column_mut(j).mapv_inplace(|v| v / norm);
    }
    q
}

/// Decoder `g(h) = W h + b` with singular values in `[lo, hi]` and its exact
/// linear inverse `f(x) = W⁻¹ (x - b)`.
pub fn linear_pair(n: usize, lo: f64, hi: f64, rng: &mut RandomSource) -> (LayerMap<f64>, LayerMap<f64>) {
    let u = random_orthogonal(n, rng);
    let v = random_orthogonal(n, rng);
    let s: Vec<f64> = (0..n).map(|_| lo + (hi - lo) * rng.uniform()).collect();
    let w = Array2::from_shape_fn((n, n), |(i, j)| (0..n).map(|k| u[[i, k]] * s[k] * v[[j, k]]).sum());
    let w_inv = Array2::from_shape_fn((n, n), |(i, j)| (0..n).map(|k| v[[i, k]] * u[[j, k]] / s[k]).sum());
    let b: Array1<f64> = rng.normal_array(n, 0.5).unwrap();
    let c = -w_inv.dot(&b);
    let f = LayerMap::new(w_inv, c, Activation::Linear).unwrap();
    let g = LayerMap::new(w, b, Activation::Linear).unwrap();
    (f, g)
}

pub fn analytic_gradient(g: &LayerMap<f64>, x: &Array1<f64>, h: &Array1<f64>) -> Array1<f64> {
    let residual = x - &g.apply(h.view()).unwrap();
    g.weight.t().dot(&residual)
}

pub fn cosine(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.dot(b) / (a.dot(a).sqrt() * b.dot(b).sqrt())
}
