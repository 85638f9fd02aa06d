#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use dwiqc::dataset::{load_dataset, DatasetSpec};
use dwiqc::phantom::{write_phantoms, PhantomConfig};
use dwiqc::rng::stream;
use dwiqc::sim::{make_benchmark, ArtifactKind, BenchmarkConfig, BenchmarkManifest};
use dwiqc::{Label, SliceKey, SliceSample, View};
use ndarray::Array2;
use rand::Rng;

/// Stripes (artifactual) versus smooth blobs (clean), `n` of each, from
/// `subjects` pseudo-volumes.
pub fn toy_samples(n: usize, size: usize, subjects: usize, seed: u64) -> Vec<SliceSample> {
    let mut rng = stream(seed, "toy");
    let mut out = Vec::with_capacity(2 * n);
    for i in 0..2 * n {
        let stripe = i % 2 == 0;
        let period = rng.random_range(4.0..8.0);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let (cr, cc) = (rng.random_range(0.3..0.7) * size as f64, rng.random_range(0.3..0.7) * size as f64);
        let sigma = rng.random_range(0.15..0.3) * size as f64;
        let pixels = Array2::from_shape_fn((size, size), |(r, c)| {
            let blob = (-((r as f64 - cr).powi(2) + (c as f64 - cc).powi(2)) / (2.0 * sigma * sigma)).exp();
            let noise = rng.random_range(-0.05..0.05);
            if stripe {
                blob + 0.8 * (std::f64::consts::TAU * c as f64 / period + phase).sin() + noise
            } else {
                blob + noise
            }
        });
        out.push(SliceSample {
            key: SliceKey::new(format!("toy_{:02}", i % subjects), View::Axial, 0, i),
            pixels,
            label: Some(Label::from_flag(stripe)),
        });
    }
    out
}

pub fn mix(kinds: &[ArtifactKind], fraction: f64) -> BTreeMap<ArtifactKind, f64> {
    kinds.iter().map(|&k| (k, fraction)).collect()
}

pub const AXIAL_KINDS: [ArtifactKind; 4] = [
    ArtifactKind::Herringbone,
    ArtifactKind::ChemicalShift,
    ArtifactKind::Susceptibility,
    ArtifactKind::Ghosting,
];

/// Writes `count` phantoms under `dir/<name>_clean`, corrupts them into
/// `dir/<name>` and loads the axial samples.
pub fn axial_benchmark(
    dir: &Path,
    name: &str,
    count: usize,
    phantom: &PhantomConfig,
    severity: (f64, f64),
    seed: u64,
) -> (BenchmarkManifest, Vec<SliceSample>) {
    let clean = dir.join(format!("{name}_clean"));
    write_phantoms(&clean, count, phantom, seed).unwrap();
    let cfg = BenchmarkConfig {
        mix: mix(&AXIAL_KINDS, 0.12),
        severity,
        seed,
        ..Default::default()
    };
    let manifest = make_benchmark(&clean, &dir.join(name), &cfg).unwrap();
    let samples = load_dataset(&DatasetSpec::benchmark(name, &dir.join(name)), View::Axial).unwrap();
    (manifest, samples)
}
