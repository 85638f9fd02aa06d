use std::collections::{BTreeMap, BTreeSet};

use dwiqc::eval::*;
use dwiqc::rng::stream;
use dwiqc::{Label, SliceKey, SliceSample, View};
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

fn brute(pred: &[bool], truth: &[bool]) -> (usize, usize, usize, usize) {
    let mut c = (0, 0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => c.0 += 1,
            (true, false) => c.1 += 1,
            (false, false) => c.2 += 1,
            (false, true) => c.3 += 1,
        }
    }
    c
}

proptest! {
    #[test]
    fn metrics_equal_brute_force(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..200)) {
        let (pred, truth): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
        let m = compute_metrics(&pred, &truth).unwrap();
        let (tp, fp, tn, fn_) = brute(&pred, &truth);
        prop_assert_eq!((m.tp, m.fp, m.tn, m.fn_), (tp, fp, tn, fn_));
        prop_assert_eq!(m.accuracy, Some((tp + tn) as f64 / pred.len() as f64));
        prop_assert_eq!(m.precision.is_none(), tp + fp == 0);
        prop_assert_eq!(m.recall.is_none(), tp + fn_ == 0);
    }
}

#[test]
fn metric_errors() {
    assert!(compute_metrics(&[], &[]).is_err());
    assert!(compute_metrics(&[true], &[true, false]).is_err());
    let m = compute_metrics(&[false, false], &[false, false]).unwrap();
    assert_eq!((m.precision, m.recall, m.accuracy), (None, None, Some(1.0)));
}

fn random_samples(seed: u64) -> Vec<SliceSample> {
    let mut rng = stream(seed, "kfold-input");
    let subjects = rng.random_range(5..30);
    let n = rng.random_range(subjects..subjects * 8);
    (0..n)
        .map(|i| SliceSample {
            key: SliceKey::new(format!("s{}", rng.random_range(0..subjects)), View::Axial, 0, i),
            pixels: Array2::zeros((2, 2)),
            label: Some(Label::from_flag(rng.random_bool(0.3))),
        })
        .collect()
}

#[test]
fn kfold_partitions_by_subject() {
    for seed in 0..100 {
        let samples = random_samples(seed);
        let subjects: BTreeSet<&str> = samples.iter().map(|s| s.key.volume_id.as_str()).collect();
        let k = 2 + (seed as usize % 4).min(subjects.len() - 2);
        let spec = FoldSpec { k, seed, grouping: Grouping::Subject };
        let folds = kfold_split(&samples, &spec).unwrap();
        assert_eq!(folds.len(), k);
        let mut seen = vec![0; samples.len()];
        let mut owner: BTreeMap<&str, usize> = BTreeMap::new();
        let mut units = Vec::new();
        for (f, idx) in folds.iter().enumerate() {
            let mut u = BTreeSet::new();
            for &i in idx {
                seen[i] += 1;
                let id = samples[i].key.volume_id.as_str();
                assert_eq!(*owner.entry(id).or_insert(f), f, "subject {id} split across folds");
                u.insert(id);
            }
            units.push(u.len());
        }
        assert!(seen.iter().all(|&c| c == 1), "seed {seed}: not a partition");
        assert!(units.iter().max().unwrap() - units.iter().min().unwrap() <= 1);
        assert_eq!(folds, kfold_split(&samples, &spec).unwrap());
    }
}

#[test]
fn kfold_seed_changes_assignment_and_slice_grouping() {
    let samples = random_samples(1000);
    let a = kfold_split(&samples, &FoldSpec { k: 5, seed: 1, grouping: Grouping::Subject }).unwrap();
    let b = kfold_split(&samples, &FoldSpec { k: 5, seed: 2, grouping: Grouping::Subject }).unwrap();
    assert_ne!(a, b);
    let slices = kfold_split(&samples, &FoldSpec { k: 5, seed: 1, grouping: Grouping::Slice }).unwrap();
    let sizes: Vec<usize> = slices.iter().map(Vec::len).collect();
    assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    let few = &samples[..1];
    assert!(kfold_split(few, &FoldSpec::default()).is_err());
    assert!(kfold_split(&samples, &FoldSpec { k: 1, ..FoldSpec::default() }).is_err());
}

#[test]
fn sweep_is_nested_on_random_counts() {
    let mut rng = stream(4, "sweep");
    for _ in 0..50 {
        let volumes: Vec<VolumeFlags> = (0..rng.random_range(1..40))
            .map(|i| VolumeFlags {
                volume_id: format!("v{i}"),
                view: View::Sagittal,
                gradient: 0,
                flag_count: rng.random_range(0..15),
                truth: rng.random_bool(0.5),
            })
            .collect();
        let report = threshold_sweep(&volumes, &(1..=10).collect::<Vec<_>>(), View::Sagittal).unwrap();
        for w in report.rows.windows(2) {
            assert!(w[1].flagged <= w[0].flagged);
        }
        for r in &report.rows {
            assert_eq!(r.flagged, volumes.iter().filter(|v| v.flag_count > r.threshold).count());
        }
    }
}
