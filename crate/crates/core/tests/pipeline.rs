mod common;

use dwiqc::labels::LabelRecord;
use dwiqc::learning::LabelOracle;
use dwiqc::phantom::{generate_phantom, PhantomConfig};
use dwiqc::pipeline::*;
use dwiqc::rng::stream;
use dwiqc::sim::{inject_ghosting, make_benchmark, ArtifactKind, BenchmarkConfig};
use dwiqc::volume::{compute_brain_extent, kept_indices, ExclusionRule};
use dwiqc::{DwiVolume, Label, SliceKey, View};
use ndarray::s;

/// Phantom with ghosting injected on six kept axial slices, and its labels.
fn ghosted() -> (DwiVolume, Vec<LabelRecord>, Vec<usize>) {
    let clean = generate_phantom("ghost6", &PhantomConfig::default(), &mut stream(5, "pipeline")).unwrap();
    let extent = compute_brain_extent(&clean, None).unwrap();
    let kept: Vec<usize> = kept_indices(View::Axial, &extent, &ExclusionRule::default()).unwrap().collect();
    let mid = kept.len() / 2;
    let hit: Vec<usize> = kept[mid - 6..mid].to_vec();
    let mut data = clean.data().clone();
    for &z in &hit {
        let slice = data.slice(s![.., .., z, 0]).to_owned();
        let ghost = inject_ghosting(&slice, 0.35).unwrap();
        data.slice_mut(s![.., .., z, 0]).assign(&ghost);
    }
    let vol = clean.with_data(data).unwrap();
    let mut labels = Vec::new();
    for view in View::ALL {
        for idx in kept_indices(view, &extent, &ExclusionRule::default()).unwrap() {
            let art = view == View::Axial && hit.contains(&idx);
            labels.push(LabelRecord::new(&SliceKey::new("ghost6", view, 0, idx), Label::from_flag(art)));
        }
    }
    (vol, labels, hit)
}

#[test]
fn oracle_flags_exactly_the_injected_slices() {
    let (vol, labels, hit) = ghosted();
    let axial = LabelOracle::from_records(&labels, Some(View::Axial));
    let sagittal = LabelOracle::from_records(&labels, Some(View::Sagittal));
    let report = qc_volume(&vol, &axial, &sagittal, &ExclusionRule::default(), &ThresholdConfig::default()).unwrap();
    report.check_consistency().unwrap();

    let flagged: Vec<usize> = report.flagged().map(|s| s.index).collect();
    assert_eq!(flagged, hit);
    assert!(report.flagged().all(|s| s.view == View::Axial));
    let counts = report.flag_counts();
    assert_eq!(counts[&(View::Axial, 0)], 6);
    assert_eq!(counts[&(View::Sagittal, 0)], 0);

    let axial_verdict = |r: &[Verdict]| r.iter().find(|v| v.view == View::Axial).unwrap().flag;
    assert!(axial_verdict(&report.verdicts));
    assert!(report.acquisition_flag);
    assert!(!axial_verdict(&report.verdicts_at(&ThresholdConfig::uniform(7))));
    assert!(!axial_verdict(&report.verdicts_at(&ThresholdConfig::uniform(6))));
    assert!(axial_verdict(&report.verdicts_at(&ThresholdConfig::uniform(5))));
}

#[test]
fn reports_round_trip_with_thumbnails() {
    let (vol, labels, hit) = ghosted();
    let oracle = LabelOracle::from_records(&labels, None);
    let report = qc_volume(&vol, &oracle, &oracle, &ExclusionRule::default(), &ThresholdConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = write_report(&report, Some(&vol), dir.path(), true).unwrap();
    assert_eq!(files.thumbnails.len(), hit.len());
    for (path, z) in files.thumbnails.iter().zip(&hit) {
        assert_eq!(path.file_name().unwrap().to_str().unwrap(), thumbnail_name(View::Axial, 0, *z));
        let img = image::open(path).unwrap().to_luma8();
        assert_eq!(img.dimensions(), (64, 64));
    }
    let back = QcReport::read(&files.report).unwrap();
    assert_eq!(back, report);
    assert_eq!(back.thresholds, ThresholdConfig { axial_slice_count: 3, sagittal_slice_count: 7 });

    let other = generate_phantom("other", &PhantomConfig::default(), &mut stream(1, "x")).unwrap();
    assert!(write_report(&report, Some(&other), dir.path(), true).is_err());
    assert!(write_report(&report, None, dir.path(), true).is_err());
}

#[test]
fn swapped_models_are_rejected() {
    let (vol, labels, _) = ghosted();
    let axial = LabelOracle::from_records(&labels, Some(View::Axial));
    let sagittal = LabelOracle::from_records(&labels, Some(View::Sagittal));
    let err = qc_volume(&vol, &sagittal, &axial, &ExclusionRule::default(), &ThresholdConfig::default());
    assert!(matches!(err, Err(dwiqc::QcError::ViewMismatch { .. })));
}

#[test]
fn ghosting_mix_labels_a_fifth_of_axial_slices() {
    let dir = tempfile::tempdir().unwrap();
    dwiqc::phantom::write_phantoms(&dir.path().join("clean"), 10, &PhantomConfig::default(), 3).unwrap();
    let cfg = BenchmarkConfig {
        mix: common::mix(&[ArtifactKind::Ghosting], 0.2),
        seed: 42,
        ..Default::default()
    };
    let manifest = make_benchmark(&dir.path().join("clean"), &dir.path().join("bench"), &cfg).unwrap();
    let labels = dwiqc::labels::read_labels(dir.path().join("bench/labels.csv")).unwrap();
    let axial: Vec<_> = labels.iter().filter(|r| r.view == View::Axial).collect();
    let positive = axial.iter().filter(|r| r.label.is_artifact()).count();
    let expected = 0.2 * axial.len() as f64;
    assert!((positive as f64 - expected).abs() <= 0.1 * expected + 2.0, "{positive} of {}", axial.len());
    let listed: usize = manifest.entries.iter().map(|e| e.affected.axial.len()).sum();
    assert_eq!(listed, positive);
}
