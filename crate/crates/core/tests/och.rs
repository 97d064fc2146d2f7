mod support;

use dbnn_core::{CounterRng, Gate, Och, OchParams};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use support::reference::RefOch;

fn normal_vec(rng: &mut CounterRng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Inputs drawn around a handful of slowly moving centers, so that matches,
/// splits and deletions all occur.
fn clustered_stream(seed: u64, dim: usize, steps: usize) -> Vec<(Vec<f64>, f64)> {
    let mut rng = CounterRng::new(seed);
    let centers: Vec<Vec<f64>> = (0..4).map(|_| normal_vec(&mut rng, dim, 3.0)).collect();
    (0..steps)
        .map(|t| {
            let c = &centers[rng.below(centers.len())];
            let x = c.iter().map(|v| v + 0.001 * t as f64 + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
            let count = if rng.bernoulli(0.2) { 0.05 + 2.0 * rng.next_f64() } else { 1.0 };
            (x, count)
        })
        .collect()
}

fn assert_matches_reference(params: OchParams, dim: usize, stream: &[(Vec<f64>, f64)]) {
    let mut och = Och::new(dim, params).unwrap();
    let mut reference = RefOch::new(params);
    for (step, (x, n)) in stream.iter().enumerate() {
        let got = och.update(x, *n).unwrap();
        let want = reference.update(x, *n);
        assert_eq!(got.matched_id, want.matched_id, "step {step}");
        assert_eq!(got.inserted_id, want.inserted_id, "step {step}");
        assert_eq!(got.deleted_ids, want.deleted_ids, "step {step}");
        assert!((got.delta_count - want.delta_count).abs() <= 1e-9, "step {step}");
        assert!((got.total_count_after - want.total_after).abs() <= 1e-9, "step {step}");
        let entries = och.entries();
        assert_eq!(entries.len(), reference.entries.len(), "step {step}");
        for (a, b) in entries.iter().zip(&reference.entries) {
            assert_eq!(a.id, b.id, "step {step}");
            assert!((a.count - b.count).abs() <= 1e-9, "step {step}: {} vs {}", a.count, b.count);
            assert_eq!(a.vector, b.vector);
        }
        assert_eq!(och.rng().counter(), reference.rng.counter(), "step {step}");
    }
}

#[test]
fn trace_matches_reference_at_defaults() {
    for (i, dim) in [2, 8, 32].into_iter().enumerate() {
        let params = OchParams { rng_seed: 100 + i as u64, ..OchParams::default() };
        assert_matches_reference(params, dim, &clustered_stream(i as u64, dim, 1000));
    }
}

#[test]
fn trace_matches_reference_with_memory() {
    for (i, dim) in [2, 8, 32].into_iter().enumerate() {
        let params = OchParams { k_target: 12, lambda: 0.4, phi_logit: -0.5, rng_seed: 7 + i as u64, ..OchParams::default() };
        assert_matches_reference(params, dim, &clustered_stream(50 + i as u64, dim, 1000));
    }
}

#[test]
fn trace_matches_reference_with_forced_gates() {
    let params = OchParams { insert_gate: Gate::Always, delete_gate: Gate::Never, lambda: 0.2, ..OchParams::default() };
    assert_matches_reference(params, 3, &clustered_stream(9, 3, 300));
    let params = OchParams { insert_gate: Gate::Never, lambda: 1.0, ..OchParams::default() };
    assert_matches_reference(params, 3, &clustered_stream(10, 3, 300));
}

#[test]
fn split_update_equals_concatenated_update() {
    let (d, p) = (3, 5);
    let params = OchParams { k_target: 8, lambda: 0.5, ..OchParams::default() };
    let mut split = Och::with_split(d + p, d, params).unwrap();
    let mut plain = Och::new(d + p, params).unwrap();
    let mut rng = CounterRng::new(4);
    let samples: Vec<Vec<f64>> = (0..6).map(|_| normal_vec(&mut rng, p, 1.0)).collect();
    for (id, w) in samples.iter().enumerate() {
        split.register_weight_sample(id as u64, w.clone()).unwrap();
    }
    for _ in 0..500 {
        let data = normal_vec(&mut rng, d, 1.0);
        let id = rng.below(samples.len());
        let mut x = data.clone();
        x.extend_from_slice(&samples[id]);
        assert_eq!(split.update_split(&data, id as u64, 1.0).unwrap(), plain.update(&x, 1.0).unwrap());
    }
    assert_eq!(split.entries(), plain.entries());
}

/// Time-averaged codevector count on a stationary stream at the default
/// parameters, per seed.
fn steady_state_size(seed: u64) -> f64 {
    let mut och = Och::new(4, OchParams { rng_seed: seed, ..OchParams::default() }).unwrap();
    let mut rng = CounterRng::new(1000 + seed);
    let steps = 10_000;
    let mut acc = 0.0;
    for _ in 0..steps {
        och.update(&normal_vec(&mut rng, 4, 1.0), 1.0).unwrap();
        acc += och.len() as f64;
    }
    acc / steps as f64
}

#[test]
fn steady_state_size_stays_near_k() {
    for seed in 0..5 {
        let size = steady_state_size(seed);
        assert!((2.5..=10.0).contains(&size), "seed {seed}: {size}");
    }
}

#[test]
fn sampling_follows_masses() {
    let params = OchParams::default().without_gates();
    let och = Och::from_bins(1, params, vec![(vec![0.0], 0.6), (vec![1.0], 0.4)]).unwrap();
    let mut rng = CounterRng::new(12);
    let n = 20_000;
    let hits = (0..n).filter(|_| och.sample_with(&mut rng).unwrap().id == 0).count() as f64;
    let sd = (0.6 * 0.4 / n as f64).sqrt();
    assert!((hits / n as f64 - 0.6).abs() < 3.0 * sd, "{}", hits / n as f64);
}

#[test]
fn codec_roundtrip_resumes_identically() {
    let params = OchParams { k_target: 6, lambda: 0.7, rng_seed: 3, ..OchParams::default() };
    let stream = clustered_stream(2, 5, 400);
    let mut a = Och::new(5, params).unwrap();
    for (x, n) in &stream[..200] {
        a.update(x, *n).unwrap();
    }
    let mut b = Och::from_bytes(&a.to_bytes()).unwrap();
    for (x, n) in &stream[200..] {
        assert_eq!(a.update(x, *n).unwrap(), b.update(x, *n).unwrap());
    }
    assert_eq!(a.to_bytes(), b.to_bytes());
}

fn arb_stream(dim: usize) -> impl Strategy<Value = Vec<(Vec<f64>, f64)>> {
    prop::collection::vec((prop::collection::vec(-5.0f64..5.0, dim), 0.01f64..3.0), 1..120)
}

fn arb_params() -> impl Strategy<Value = OchParams> {
    (1usize..12, 0.0f64..8.0, -3.0f64..3.0, any::<u64>()).prop_map(|(k_target, lambda, phi_logit, rng_seed)| OchParams {
        k_target,
        lambda,
        phi_logit,
        rng_seed,
        ..OchParams::default()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masses_are_normalized_and_positive(params in arb_params(), stream in arb_stream(3)) {
        let mut och = Och::new(3, params).unwrap();
        for (x, n) in &stream {
            let out = och.update(x, *n).unwrap();
            prop_assert!(!och.is_empty());
            let sum: f64 = och.weights().map(|(_, p)| p).sum();
            prop_assert!((sum - 1.0).abs() < 1e-12, "sum {}", sum);
            prop_assert!(och.weights().all(|(_, p)| p > 0.0));
            prop_assert!(out.total_count_after > 0.0);
            let ids: Vec<u64> = och.entries().iter().map(|e| e.id).collect();
            prop_assert!(ids.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn same_seed_same_histogram(params in arb_params(), stream in arb_stream(2)) {
        let mut a = Och::new(2, params).unwrap();
        let mut b = Och::new(2, params).unwrap();
        for (x, n) in &stream {
            prop_assert_eq!(a.update(x, *n).unwrap(), b.update(x, *n).unwrap());
        }
        prop_assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn decay_conserves_scaled_mass(lambda in 0.0f64..6.0, stream in arb_stream(2)) {
        // no gates: after each update N' = (N + n) * exp(-lambda / (N + n)),
        // unless the floor removed bins
        let params = OchParams { lambda, ..OchParams::default() }.without_gates();
        let mut och = Och::new(2, params).unwrap();
        for (x, n) in &stream {
            let before = och.total_count();
            let out = och.update(x, *n).unwrap();
            if out.deleted_ids.is_empty() && before > 0.0 {
                let m = before + n;
                let want = m * (-lambda / m).exp();
                prop_assert!((out.total_count_after - want).abs() <= 1e-9 * want.max(1.0));
            }
        }
    }

    #[test]
    fn one_bin_delta_without_gates_or_decay(stream in arb_stream(2)) {
        let params = OchParams { lambda: 0.0, ..OchParams::default() }.without_gates();
        let mut och = Och::new(2, params).unwrap();
        och.update(&stream[0].0, stream[0].1).unwrap();
        for (x, n) in &stream[1..] {
            let before: Vec<(u64, f64)> = och.entries().iter().map(|e| (e.id, e.count)).collect();
            let out = och.update(x, *n).unwrap();
            let after: Vec<(u64, f64)> = och.entries().iter().map(|e| (e.id, e.count)).collect();
            prop_assert_eq!(before.len(), after.len());
            let changed: Vec<usize> = (0..before.len()).filter(|&i| before[i].1 != after[i].1).collect();
            prop_assert_eq!(changed.len(), 1);
            let i = changed[0];
            prop_assert_eq!(after[i].0, out.matched_id);
            prop_assert!((after[i].1 - before[i].1 - n).abs() <= 1e-12 * after[i].1.max(1.0));
            let total: f64 = after.iter().map(|e| e.1).sum();
            prop_assert!((out.alpha() - (after[i].1 - before[i].1) / total).abs() <= 1e-12);
        }
    }

    #[test]
    fn reference_agrees_on_arbitrary_streams(params in arb_params(), stream in arb_stream(4)) {
        let mut och = Och::new(4, params).unwrap();
        let mut reference = RefOch::new(params);
        for (x, n) in &stream {
            let got = och.update(x, *n).unwrap();
            let want = reference.update(x, *n);
            prop_assert_eq!(got.matched_id, want.matched_id);
            prop_assert_eq!(&got.deleted_ids, &want.deleted_ids);
            prop_assert!((got.delta_count - want.delta_count).abs() <= 1e-9);
        }
        prop_assert_eq!(och.len(), reference.entries.len());
    }

    #[test]
    fn codec_roundtrip(params in arb_params(), stream in arb_stream(3)) {
        let mut och = Och::new(3, params).unwrap();
        for (x, n) in &stream {
            och.update(x, *n).unwrap();
        }
        let bytes = och.to_bytes();
        let back = Och::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back.entries(), och.entries());
    }
}
