//! Elementwise nonlinearities used by the feedforward and feedback maps.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array, ArrayBase, Data, Dimension, Zip};

use crate::error::Error;
use crate::scalar::Scalar;

/// `ln(1 + e^x)`, split at 0 so `exp` never overflows.
#[inline]
pub fn softplus_scalar<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn softplus<T, S, D>(v: &ArrayBase<S, D>) -> Array<T, D>
where
    T: Scalar,
    S: Data<Elem = T>,
    D: Dimension,
{
    v.mapv(softplus_scalar)
}

pub fn sigmoid<T, S, D>(v: &ArrayBase<S, D>) -> Array<T, D>
where
    T: Scalar,
    S: Data<Elem = T>,
    D: Dimension,
{
    v.mapv(sigmoid_scalar)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Softplus,
    Sigmoid,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply_scalar<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Softplus => softplus_scalar(x),
            Activation::Sigmoid => sigmoid_scalar(x),
            Activation::Linear => x,
        }
    }

    /// Derivative with respect to the pre-activation `x`.
    #[inline]
    pub fn derivative_scalar<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Softplus => sigmoid_scalar(x),
            Activation::Sigmoid => {
                let s = sigmoid_scalar(x);
                s * (T::one() - s)
            }
            Activation::Linear => T::one(),
        }
    }

    pub fn apply_inplace<T: Scalar, D: Dimension>(self, v: &mut Array<T, D>) {
        if self != Activation::Linear {
            v.mapv_inplace(|x| self.apply_scalar(x));
        }
    }

    /// Replaces `grad` by `grad * act'(pre)`.
    pub fn backprop_inplace<T: Scalar, D: Dimension>(self, pre: &Array<T, D>, grad: &mut Array<T, D>) {
        if self != Activation::Linear {
            Zip::from(grad)
                .and(pre)
                .for_each(|g, &p| *g = *g * self.derivative_scalar(p));
        }
    }

    /// Closed interval containing every output value, if bounded.
    pub fn range(self) -> Option<(f64, f64)> {
        match self {
            Activation::Sigmoid => Some((0.0, 1.0)),
            Activation::Softplus | Activation::Linear => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Softplus => "softplus",
            Activation::Sigmoid => "sigmoid",
            Activation::Linear => "linear",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "softplus" => Ok(Activation::Softplus),
            "sigmoid" => Ok(Activation::Sigmoid),
            "linear" => Ok(Activation::Linear),
            other => Err(Error::parse("activation", format!("unknown activation `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn softplus_reference_points() {
        assert!((softplus_scalar(0.0f64) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus_scalar(100.0f64) - 100.0).abs() < 1e-12);
        let tiny = softplus_scalar(-100.0f64);
        assert!(tiny > 0.0 && tiny.is_finite());
        assert!((tiny / (-100.0f64).exp() - 1.0).abs() < 1e-12);
        assert_eq!(softplus_scalar(1000.0f64), 1000.0);
        assert!(softplus_scalar(-1000.0f64).is_finite());
    }

    #[test]
    fn sigmoid_reference_points() {
        assert_eq!(sigmoid_scalar(0.0f64), 0.5);
        assert!((sigmoid_scalar(1000.0f64) - 1.0).abs() < 1e-12);
        assert!(sigmoid_scalar(-1000.0f64) >= 0.0);
        let v = sigmoid(&array![-3.0f64, 0.0, 3.0]);
        assert!(v.iter().all(|&s| s > 0.0 && s < 1.0));
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for act in [Activation::Softplus, Activation::Sigmoid, Activation::Linear] {
            for &x in &[-4.0f64, -0.3, 0.0, 0.7, 5.0] {
                let h = 1e-6;
                let fd = (act.apply_scalar(x + h) - act.apply_scalar(x - h)) / (2.0 * h);
                assert!((fd - act.derivative_scalar(x)).abs() < 1e-8, "{act} at {x}");
            }
        }
    }

    #[test]
    fn parse_round_trip() {
        for act in [Activation::Softplus, Activation::Sigmoid, Activation::Linear] {
            assert_eq!(act.name().parse::<Activation>().unwrap(), act);
        }
        assert!("tanh".parse::<Activation>().is_err());
    }

    proptest! {
        #[test]
        fn sigmoid_is_symmetric(x in -800.0f64..800.0) {
            prop_assert!((sigmoid_scalar(x) + sigmoid_scalar(-x) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn activations_are_monotone(mut xs in proptest::collection::vec(-750.0f64..750.0, 2..64)) {
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for act in [Activation::Softplus, Activation::Sigmoid, Activation::Linear] {
                let ys: Vec<f64> = xs.iter().map(|&x| act.apply_scalar(x)).collect();
                prop_assert!(ys.iter().all(|y| y.is_finite()));
                prop_assert!(ys.windows(2).all(|w| w[0] <= w[1]));
            }
        }

        #[test]
        fn f32_softplus_is_finite(x in -1e30f32..1e30) {
            let y = softplus_scalar(x);
            prop_assert!(y.is_finite() && y >= 0.0);
        }
    }
}
