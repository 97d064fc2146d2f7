use std::fs;

use dbnn_harness::gen::{gen_stream, GenParams, Labeler, StreamKind};
use dbnn_harness::records::{self, Format, Label, StreamRecord, ZScored};
use dbnn_harness::HarnessError;

#[test]
fn three_row_csv_in_file_order() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    fs::write(&path, "timestamp,x0,x1,label\n1,0.5,-1,0\n2,1.5,2e-1,1\n5,3,4,\n").unwrap();
    let recs = records::load(&path, Format::Csv, None).unwrap();
    assert_eq!(
        recs,
        vec![
            StreamRecord { features: vec![0.5, -1.0], label: Some(Label::Class(0)), timestamp: Some(1) },
            StreamRecord { features: vec![1.5, 0.2], label: Some(Label::Class(1)), timestamp: Some(2) },
            StreamRecord { features: vec![3.0, 4.0], label: None, timestamp: Some(5) },
        ]
    );
}

#[test]
fn non_numeric_feature_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    fs::write(&path, "x0,x1\n1,2\n3,4\n5,oops\n").unwrap();
    let out: Vec<_> = records::ingest(&path, Format::Csv).unwrap().collect();
    assert!(out[..2].iter().all(Result::is_ok));
    match &out[2] {
        Err(HarnessError::Data { line: Some(4), message }) => assert!(message.contains("oops"), "{message}"),
        other => panic!("{other:?}"),
    }

    let path = dir.path().join("s.jsonl");
    fs::write(&path, "{\"features\":[1,2]}\n\n{\"features\":[1,\"x\"]}\n").unwrap();
    let out: Vec<_> = records::ingest(&path, Format::Jsonl).unwrap().collect();
    assert!(matches!(out[1], Err(HarnessError::Data { line: Some(3), .. })), "{:?}", out[1]);
}

#[test]
fn dimension_drift_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.jsonl");
    fs::write(&path, "{\"features\":[1,2]}\n{\"features\":[1,2,3]}\n").unwrap();
    let err = records::load(&path, Format::Jsonl, None).unwrap_err();
    assert!(matches!(err, HarnessError::Schema { line: 2, .. }), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn csv_and_jsonl_encodings_agree() {
    let dir = tempfile::tempdir().unwrap();
    for labeler in [
        Labeler::Threshold { flip_max: 0.3, band: 0.5 },
        Labeler::Regression { scale: 1.0, slope: 1.0, noise_sd: 0.1 },
        Labeler::None,
    ] {
        let recs: Vec<_> = gen_stream(GenParams { steps: 200, dim: 3, labeler, ..GenParams::default() }).unwrap().collect();
        let csv = dir.path().join("s.csv");
        let jsonl = dir.path().join("s.jsonl");
        records::write(&csv, Format::Csv, &recs).unwrap();
        records::write(&jsonl, Format::Jsonl, &recs).unwrap();
        assert_eq!(records::load(&csv, Format::Csv, None).unwrap(), recs);
        assert_eq!(records::load(&jsonl, Format::Jsonl, None).unwrap(), recs);
    }
}

#[test]
fn zscore_uses_warmup_statistics_only() {
    let recs: Vec<StreamRecord> =
        (0..20).map(|i| StreamRecord { features: vec![i as f64], label: None, timestamp: None }).collect();
    let z = ZScored::new(recs.clone().into_iter().map(Ok), 10).unwrap();
    let stats = z.stats().unwrap().clone();
    assert!((stats.mean[0] - 4.5).abs() < 1e-12);
    let out: Vec<f64> = z.map(|r| r.unwrap().features[0]).collect();
    assert_eq!(out.len(), 20);
    assert!((out[19] - (19.0 - 4.5) / stats.sd[0]).abs() < 1e-12);
}

#[test]
fn drifting_mean_moves_by_delta_per_step() {
    let noise = 0.5;
    let p = GenParams { kind: StreamKind::DriftingGaussian, dim: 2, steps: 1000, start: -3.0, delta: 0.01, noise_sd: noise, ..GenParams::default() };
    let recs: Vec<_> = gen_stream(p).unwrap().collect();
    for d in 0..2 {
        // mean of the last 100 records against the mean drift position
        let got = recs[900..].iter().map(|r| r.features[d]).sum::<f64>() / 100.0;
        let want = (900..1000).map(|t| -3.0 + 0.01 * t as f64).sum::<f64>() / 100.0;
        assert!((got - want).abs() < 3.0 * noise / 10.0, "dim {d}: {got} vs {want}");
    }
}

#[test]
fn zero_delta_is_stationary() {
    let p = GenParams { delta: 0.0, start: 2.0, steps: 4000, noise_sd: 1.0, ..GenParams::default() };
    let recs: Vec<_> = gen_stream(p).unwrap().collect();
    let first = recs[..2000].iter().map(|r| r.features[0]).sum::<f64>() / 2000.0;
    let second = recs[2000..].iter().map(|r| r.features[0]).sum::<f64>() / 2000.0;
    assert!((first - second).abs() < 4.0 * (2.0f64 / 2000.0).sqrt());
    assert!((first - 2.0).abs() < 4.0 / 2000f64.sqrt());
}
