//! Cross-module properties on small random networks.

use ndarray::{Array1, Array2, ArrayView2};
use proptest::prelude::*;
use tpgen::checkpoint::{decode_checkpoint, encode_checkpoint};
use tpgen::model::LayerMap;
use tpgen::training::{fit_top_prior, train};
use tpgen::{
    infer_batch, Activation, Architecture, GaussianPrior, InferenceConfig, NetworkParams, RandomSource, TrainConfig,
};

fn activation() -> impl Strategy<Value = Activation> {
    prop_oneof![Just(Activation::Softplus), Just(Activation::Sigmoid), Just(Activation::Linear)]
}

fn architecture() -> impl Strategy<Value = Architecture> {
    prop::collection::vec(1usize..7, 2..5).prop_flat_map(|widths| {
        let depth = widths.len() - 1;
        (
            Just(widths),
            prop::collection::vec(activation(), depth),
            prop::collection::vec(activation(), depth),
        )
            .prop_map(|(widths, feedforward, feedback)| Architecture {
                widths,
                feedforward,
                feedback,
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn checkpoints_round_trip_exactly(arch in architecture(), seed in any::<u64>(), with_prior in any::<bool>()) {
        let mut params = NetworkParams::<f64>::init(&arch, seed).unwrap();
        for pair in &mut params.layers {
            // Non-zero biases so every tensor carries information.
            pair.feedforward.bias.mapv_inplace(|_| seed as f64 * 1e-20 + 0.125);
            pair.feedback.bias.fill(-3.5e-7);
        }
        if with_prior {
            let d = params.top_dim();
            params.prior = Some(GaussianPrior::new(Array1::linspace(-1.0, 1.0, d), Array1::from_elem(d, 0.3)).unwrap());
        }
        let bytes = encode_checkpoint(&params, Some("seed = 1\n"));
        let back = decode_checkpoint::<f64>(&bytes).unwrap();
        prop_assert_eq!(&back.params, &params);
        prop_assert_eq!(back.config.as_deref(), Some("seed = 1\n"));
        prop_assert_eq!(encode_checkpoint(&back.params, back.config.as_deref()), bytes);
    }

    #[test]
    fn batch_inference_is_deterministic_and_finite(seed in any::<u64>(), rows in 1usize..40, noise in 0.0f64..0.5) {
        let arch = Architecture {
            widths: vec![9, 6, 3],
            feedforward: vec![Activation::Softplus, Activation::Sigmoid],
            feedback: vec![Activation::Sigmoid, Activation::Softplus],
        };
        let params = NetworkParams::<f64>::init(&arch, seed).unwrap();
        let x: Array2<f64> = RandomSource::new(seed ^ 1).uniform_array((rows, 9));
        let cfg = InferenceConfig { steps: 5, noise_std: noise, record_trace: true, ..Default::default() };
        let rng = RandomSource::new(seed ^ 2);
        let (a, ta) = infer_batch(&params, x.view(), &cfg, &rng).unwrap();
        let (b, tb) = infer_batch(&params, x.view(), &cfg, &rng).unwrap();
        prop_assert_eq!(&a.h, &b.h);
        let (ta, tb) = (ta.unwrap(), tb.unwrap());
        prop_assert_eq!(&ta.joint_ll, &tb.joint_ll);
        prop_assert!(ta.joint_ll.iter().all(|v| v.is_finite()));
    }
}

/// Mean `|g(f(u)) - u|²` over rows of `u`.
fn round_trip_error(f: &LayerMap<f64>, g: &LayerMap<f64>, u: ArrayView2<f64>) -> f64 {
    let back = g.apply_batch(f.apply_batch(u).unwrap().view()).unwrap();
    (&back - &u).mapv(|v| v * v).sum() / u.nrows() as f64
}

/// Low-dimensional data: noisy mixtures of three smooth 16-pixel prototypes.
fn toy_images(n: usize, seed: u64) -> Array2<f64> {
    let mut rng = RandomSource::new(seed);
    let protos: Vec<Array1<f64>> = (0..3)
        .map(|p| Array1::from_shape_fn(16, |j| 0.5 + 0.4 * ((j as f64 * (p + 1) as f64) * 0.4).sin()))
        .collect();
    Array2::from_shape_fn((n, 16), |(i, j)| {
        let w = (i % 3, (i / 3) % 3);
        (0.6 * protos[w.0][j] + 0.4 * protos[w.1][j] + 0.02 * (rng.uniform() - 0.5)).clamp(0.0, 1.0)
    })
}

/// Training turns each layer pair into an auto-encoder in both directions on
/// held-out inferred states.
#[test]
fn training_builds_symmetric_auto_encoders() {
    let arch = Architecture {
        widths: vec![16, 12, 6],
        feedforward: vec![Activation::Softplus, Activation::Sigmoid],
        feedback: vec![Activation::Sigmoid, Activation::Softplus],
    };
    let data = toy_images(400, 3);
    let (train_x, held_out) = (data.slice(ndarray::s![..300, ..]), data.slice(ndarray::s![300.., ..]));
    let init = NetworkParams::<f64>::init(&arch, 11).unwrap();
    let cfg = TrainConfig {
        epochs: 30,
        minibatch_size: 10,
        learning_rate: 0.05,
        seed: 11,
        ..Default::default()
    };
    let (trained, _) = train(train_x, init.clone(), &cfg).unwrap();

    let errors = |params: &NetworkParams<f64>| -> Vec<(f64, f64)> {
        let (h, _) = infer_batch(params, held_out, &cfg.inference, &RandomSource::new(0)).unwrap();
        (1..=params.depth())
            .map(|k| {
                let pair = params.pair(k);
                let below = if k == 1 { held_out.to_owned() } else { h.h[k - 2].clone() };
                (
                    round_trip_error(&pair.feedforward, &pair.feedback, below.view()),
                    round_trip_error(&pair.feedback, &pair.feedforward, h.h[k - 1].view()),
                )
            })
            .collect()
    };
    let before = errors(&init);
    let after = errors(&trained);
    for (k, (b, a)) in before.iter().zip(&after).enumerate() {
        assert!(a.0 < b.0, "layer {}: |g(f(h)) - h| {} -> {}", k + 1, b.0, a.0);
        assert!(a.1 < b.1, "layer {}: |f(g(h)) - h| {} -> {}", k + 1, b.1, a.1);
    }
}

#[test]
fn fitted_prior_matches_inferred_top_states() {
    let arch = Architecture {
        widths: vec![16, 8, 4],
        feedforward: vec![Activation::Softplus, Activation::Sigmoid],
        feedback: vec![Activation::Sigmoid, Activation::Softplus],
    };
    let data = toy_images(50, 4);
    let mut params = NetworkParams::<f64>::init(&arch, 2).unwrap();
    let cfg = TrainConfig::default();
    let prior = fit_top_prior(data.view(), &mut params, &cfg).unwrap();

    let (h, _) = infer_batch(&params, data.view(), &cfg.inference, &RandomSource::new(cfg.seed)).unwrap();
    let top = h.top();
    let mean = top.mean_axis(ndarray::Axis(0)).unwrap();
    let var = top.var_axis(ndarray::Axis(0), 0.0);
    for j in 0..4 {
        assert!((prior.mean[j] - mean[j]).abs() < 1e-9);
        assert!((prior.variance[j] - (4.0 * var[j]).max(1e-6)).abs() < 1e-9);
    }
    assert_eq!(params.prior.as_ref(), Some(&prior));
}
