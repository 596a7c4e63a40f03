use std::collections::BTreeMap;
use std::io::Write;

use qualperf::data::{load_records, pool_by_label, pool_indices, read_records, save_records, Label, RecordSet, Schema, VerificationRecord};
use qualperf::partition::diagonal_gaussian;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[test]
fn large_file_keeps_every_row() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut file = tempfile::NamedTempFile::new().unwrap();
    writeln!(file, "score,label,q1,q2,pool").unwrap();
    let n = 22_960;
    for i in 0..n {
        let label = if rng.random_bool(0.3) { "match" } else { "nonmatch" };
        writeln!(file, "{},{label},{},{},p{}", rng.random::<f64>(), rng.random::<f64>(), -rng.random::<f64>(), i % 7).unwrap();
    }
    file.flush().unwrap();
    let text = std::fs::read_to_string(file.path()).unwrap();
    let rs = load_records(file.path(), &Schema::default()).unwrap();
    assert_eq!(rs.len(), text.lines().count() - 1);
    assert_eq!(rs.len(), n);
    assert_eq!(rs.d_q, 2);
}

#[test]
fn save_then_load_is_lossless() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let records: Vec<VerificationRecord> = (0..500)
        .map(|i| VerificationRecord {
            score: rng.random::<f64>() * 1e3 - 500.0,
            quality: vec![rng.random(), rng.random::<f64>() * 1e-9, -rng.random::<f64>()],
            label: if i % 3 == 0 { Label::Match } else { Label::NonMatch },
            pool: Some(format!("g{}", i % 11)),
        })
        .collect();
    let rs = RecordSet::new(records, 3, "mem").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    save_records(&rs, &path).unwrap();
    let back = load_records(&path, &Schema::default()).unwrap();
    assert_eq!(back.records, rs.records);
}

#[test]
fn pool_sizes_sum_to_the_record_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let records: Vec<VerificationRecord> = (0..1000)
        .map(|_| VerificationRecord {
            score: 0.0,
            quality: vec![0.0],
            label: Label::Match,
            pool: Some(format!("p{}", rng.random_range(0..13))),
        })
        .collect();
    let rs = RecordSet::new(records, 1, "mem").unwrap();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in &rs.records {
        *counts.entry(r.pool.clone().unwrap()).or_default() += 1;
    }
    let pools = pool_indices(&rs).unwrap();
    assert_eq!(pools.values().map(Vec::len).sum::<usize>(), 1000);
    for (name, idx) in &pools {
        assert_eq!(counts[name], idx.len());
    }
    let sets = pool_by_label(&rs).unwrap();
    assert_eq!(sets.values().map(RecordSet::len).sum::<usize>(), 1000);
}

#[test]
fn bad_label_names_the_row() {
    let text = "score,label,q1\n0.5,match,0.1\n0.2,maybe,0.3\n";
    let err = read_records(text.as_bytes(), &Schema::default(), "inline").unwrap_err();
    assert!(err.to_string().contains('3'), "{err}");
}

#[test]
fn region_gaussian_recovers_known_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mu, sd) = ([1.5, -0.4], [0.3, 2.0]);
    let samples: Vec<Vec<f64>> = (0..10_000)
        .map(|_| (0..2).map(|j| Normal::new(mu[j], sd[j]).unwrap().sample(&mut rng)).collect())
        .collect();
    let g = diagonal_gaussian(samples.iter().map(Vec::as_slice), &[1e-12, 1e-12]);
    let n = samples.len() as f64;
    for j in 0..2 {
        let var = sd[j] * sd[j];
        assert!((g.mean[j] - mu[j]).abs() < 3.0 * sd[j] / n.sqrt());
        // standard error of the sample variance is σ²·sqrt(2/(n−1))
        assert!((g.variance[j] - var).abs() < 3.0 * var * (2.0 / (n - 1.0)).sqrt());
    }
}
