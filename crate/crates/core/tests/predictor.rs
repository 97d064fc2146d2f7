use dbnn_core::engine::default_posterior_params;
use dbnn_core::predictor::{build_posterior_och, softmax, weight_file};
use dbnn_core::{Activation, CounterRng, MlpSpec, Model, Posterior, PredictorError, Task};
use proptest::prelude::*;

/// Weights `((37 i) mod 17 - 8) / 10` for a `[3, 4, 2]` network.
fn fixture_weights() -> Vec<f64> {
    (0..26).map(|i| (((i * 37) % 17) as f64 - 8.0) / 10.0).collect()
}

// Expected outputs computed with numpy (matrix products, float64).
#[test]
fn forward_matches_independent_computation() {
    let x = [0.5, -1.25, 2.0];
    let cases = [
        (Activation::Tanh, [-1.3982186035227029, -0.5871643121600504]),
        (Activation::Relu, [-1.1949999999999998, -0.8025000000000001]),
        (Activation::Identity, [-1.6349999999999998, -0.9150000000000001]),
    ];
    for (act, want) in cases {
        let spec = MlpSpec::new(vec![3, 4, 2], act, Task::Regression).unwrap();
        assert_eq!(spec.param_count(), 26);
        let got = spec.forward(&fixture_weights(), &x).unwrap();
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-12, "{act:?}: {g} vs {w}");
        }
    }
}

#[test]
fn forward_rejects_bad_shapes() {
    let spec = MlpSpec::new(vec![3, 4, 2], Activation::Tanh, Task::Regression).unwrap();
    assert!(matches!(spec.forward(&[0.0; 25], &[0.0; 3]), Err(PredictorError::Shape { expected: 26, actual: 25, .. })));
    assert!(matches!(spec.forward(&fixture_weights(), &[0.0; 2]), Err(PredictorError::Dimension { expected: 3, actual: 2 })));
}

#[test]
fn softmax_is_stable_for_large_logits() {
    let p = softmax(&[1000.0, 1000.0 + 2f64.ln()]);
    assert!((p[0] - 1.0 / 3.0).abs() < 1e-12 && (p[1] - 2.0 / 3.0).abs() < 1e-12);
}

fn gaussian_model() -> Model {
    let spec = MlpSpec::new(vec![3, 4, 2], Activation::Tanh, Task::Classification).unwrap();
    let mean = fixture_weights();
    let log_var = (0..26).map(|i| -3.0 + 0.1 * i as f64).collect();
    Model::new(spec, Posterior::Gaussian { mean, log_var }).unwrap()
}

#[test]
fn weight_file_roundtrips_every_posterior_kind() {
    let base = gaussian_model();
    let w = fixture_weights();
    let shifted: Vec<f64> = w.iter().map(|v| v + 0.5).collect();
    for posterior in [
        base.posterior.clone(),
        Posterior::point(w.clone()),
        Posterior::ensemble(vec![w.clone(), shifted]),
    ] {
        let model = Model::new(base.spec.clone(), posterior).unwrap();
        let bytes = weight_file::encode(&model, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(weight_file::decode(&bytes).unwrap(), model);
    }
}

#[test]
fn weight_file_header_is_ascii() {
    let bytes = weight_file::encode(&gaussian_model(), &[0.0; 3]).unwrap();
    let header = "dbnn-weights 1\nlayers 3 4 2\nactivation tanh\ntask classification\nposterior gaussian\nmembers 1\nend\n";
    assert_eq!(&bytes[..header.len()], header.as_bytes());
    assert_eq!(bytes.len(), header.len() + 8 * (2 * 26 + 3 + 2));
}

fn with_header(header: &str, values: &[f64]) -> Vec<u8> {
    let mut out = header.as_bytes().to_vec();
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

#[test]
fn weight_file_reports_wrong_payload_length() {
    let header = "dbnn-weights 1\nlayers 2 1\nactivation tanh\ntask regression\nposterior point\nmembers 1\nend\n";
    // 3 weights + 2 probe inputs + 1 expected output, one value missing
    let err = weight_file::decode(&with_header(header, &[1.0, 2.0, 3.0, 0.0, 0.0])).unwrap_err();
    assert!(matches!(err, PredictorError::Shape { expected: 6, actual: 5, .. }), "{err}");
}

#[test]
fn weight_file_reports_header_line() {
    let header = "dbnn-weights 1\nlayers 2 1\nactivation swish\ntask regression\nposterior point\nend\n";
    let err = weight_file::decode(&with_header(header, &[])).unwrap_err();
    assert!(matches!(err, PredictorError::Parse { line: 3, .. }), "{err}");

    let err = weight_file::decode(b"dbnn-weights 2\nend\n").unwrap_err();
    assert!(matches!(err, PredictorError::Parse { line: 1, .. }), "{err}");

    let err = weight_file::decode(b"dbnn-weights 1\nlayers 2 1\n").unwrap_err();
    assert!(matches!(err, PredictorError::Parse { .. }), "{err}");
}

#[test]
fn weight_file_self_test_detects_corruption() {
    let header = "dbnn-weights 1\nlayers 2 1\nactivation identity\ntask regression\nposterior point\nmembers 1\nend\n";
    // w = (1, 2), b = 3; probe (1, 1) gives 6
    assert!(weight_file::decode(&with_header(header, &[1.0, 2.0, 3.0, 1.0, 1.0, 6.0])).is_ok());
    let err = weight_file::decode(&with_header(header, &[1.0, 2.0, 3.5, 1.0, 1.0, 6.0])).unwrap_err();
    assert!(matches!(err, PredictorError::SelfTest { index: 0, .. }), "{err}");
}

#[test]
fn gaussian_draws_have_posterior_moments() {
    let model = gaussian_model();
    let Posterior::Gaussian { mean, log_var } = &model.posterior else { unreachable!() };
    let mut rng = CounterRng::new(77);
    let n = 20_000;
    let mut sum = vec![0.0; 26];
    let mut sq = vec![0.0; 26];
    for _ in 0..n {
        let w = model.posterior.sample(&mut rng).weights;
        for i in 0..26 {
            sum[i] += w[i];
            sq[i] += w[i] * w[i];
        }
    }
    for i in 0..26 {
        let var = log_var[i].exp();
        let m = sum[i] / n as f64;
        let v = sq[i] / n as f64 - m * m;
        assert!((m - mean[i]).abs() < 4.0 * (var / n as f64).sqrt(), "mean {i}");
        // sd of the sample variance is about var * sqrt(2 / n)
        assert!((v - var).abs() < 4.0 * var * (2.0 / n as f64).sqrt(), "var {i}");
    }
}

#[test]
fn ensemble_draws_cover_members_like_coupon_collection() {
    let members: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64]).collect();
    let posterior = Posterior::ensemble(members);
    let mut rng = CounterRng::new(5);
    let trials = 400;
    let mut distinct = 0.0;
    for _ in 0..trials {
        let mut seen = [false; 30];
        for _ in 0..30 {
            seen[posterior.sample(&mut rng).id as usize] = true;
        }
        distinct += seen.iter().filter(|&&s| s).count() as f64;
    }
    let want = 30.0 * (1.0 - (29.0f64 / 30.0).powi(30));
    assert!((distinct / trials as f64 - want).abs() < 0.3, "{} vs {want}", distinct / trials as f64);
}

#[test]
fn quantized_ensemble_keeps_most_members() {
    for seed in 0..5 {
        let members: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, (i * i) as f64 / 30.0]).collect();
        let posterior = Posterior::ensemble(members);
        let mut rng = CounterRng::new(seed);
        let och = build_posterior_och(&posterior, 30, default_posterior_params(), &mut rng).unwrap();
        assert!((15..=30).contains(&och.len()), "seed {seed}: {}", och.len());
        let sum: f64 = och.weights().map(|(_, p)| p).sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn forward_is_deterministic(w in prop::collection::vec(-2.0f64..2.0, 26), x in prop::collection::vec(-3.0f64..3.0, 3)) {
        let spec = MlpSpec::new(vec![3, 4, 2], Activation::Tanh, Task::Classification).unwrap();
        let a = spec.forward(&w, &x).unwrap();
        let b = spec.forward(&w, &x).unwrap();
        prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        let p = softmax(&a);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
