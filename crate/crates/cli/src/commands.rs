use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use dwiqc::augment::augment_dataset;
use dwiqc::config::ExperimentConfig;
use dwiqc::dataset::{load_dataset, load_labeled_samples, DatasetSpec};
use dwiqc::eval::{
    cross_dataset_eval, cross_validate, finetune_eval, out_of_fold_probabilities, threshold_sweep,
    volume_flags_from_predictions, DetectorTrainer,
};
use dwiqc::labels::read_labels;
use dwiqc::learning::{
    load_backbone, load_model, make_backbone_asset, train_detector, Backbone, Backend, BackendSpec, DetectorModel,
    LabelOracle, SliceClassifier,
};
use dwiqc::nifti_io::{list_volumes, load_dwi};
use dwiqc::phantom::{write_phantoms, PhantomConfig};
use dwiqc::pipeline::{qc_volume, write_report, ThresholdConfig};
use dwiqc::rng::derive_seed;
use dwiqc::sim::{make_benchmark, ArtifactKind, BenchmarkConfig, BenchmarkManifest};
use dwiqc::volume::ExclusionRule;
use dwiqc::{QcError, SliceSample, View};

use crate::args::*;
use crate::{usage, CliResult};

fn parse_range(text: &str, what: &str) -> CliResult<(f64, f64)> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [lo, hi] => match (lo.parse(), hi.parse()) {
            (Ok(lo), Ok(hi)) => Ok((lo, hi)),
            _ => Err(usage(format!("{what} '{text}' is not two numbers"))),
        },
        _ => Err(usage(format!("{what} '{text}' must be 'lo,hi'"))),
    }
}

pub fn parse_mix(tokens: &[String]) -> CliResult<BTreeMap<ArtifactKind, f64>> {
    let mut mix = BTreeMap::new();
    for token in tokens.iter().map(|t| t.trim()).filter(|t| !t.is_empty()) {
        let (kind, frac) = token
            .split_once('=')
            .ok_or_else(|| usage(format!("mix entry '{token}' must be kind=fraction")))?;
        let kind: ArtifactKind = kind
            .parse()
            .map_err(|_| usage(format!("unknown artifact kind in mix entry '{token}'")))?;
        let frac: f64 = frac
            .trim()
            .parse()
            .map_err(|_| usage(format!("bad fraction in mix entry '{token}'")))?;
        mix.insert(kind, frac);
    }
    Ok(mix)
}

pub fn phantoms(a: PhantomsArgs) -> CliResult {
    let mut cfg = PhantomConfig {
        gradients: a.gradients,
        ..Default::default()
    };
    if let Some(s) = &a.brain_scale {
        cfg.brain_scale = parse_range(s, "brain scale")?;
    }
    if let Some(n) = a.noise {
        cfg.noise = n;
    }
    let paths = write_phantoms(&a.out, a.count, &cfg, a.seed)?;
    println!("wrote {} phantom(s) to {}", paths.len(), a.out.display());
    Ok(())
}

pub fn make_backbone(a: MakeBackboneArgs) -> CliResult {
    let spec = make_backbone_asset(&a.out, a.seed)?;
    println!("{}", serde_json::to_string_pretty(&spec).map_err(QcError::from)?);
    Ok(())
}

pub fn simulate(a: SimulateArgs) -> CliResult {
    let config = BenchmarkConfig {
        mix: parse_mix(&a.mix)?,
        severity: parse_range(&a.severity, "severity")?,
        seed: a.seed,
        exclusion: ExclusionRule::default(),
    };
    config.validate()?;
    let manifest = make_benchmark(&a.clean_dir, &a.out, &config)?;
    print_manifest(&manifest);
    Ok(())
}

fn print_manifest(m: &BenchmarkManifest) {
    println!(
        "benchmark: {} volume(s), {} without artifacts, seed {}",
        m.volume_count, m.clean_count, m.seed
    );
    let mut per_kind: BTreeMap<ArtifactKind, usize> = BTreeMap::new();
    for e in &m.entries {
        for a in &e.artifacts {
            *per_kind.entry(a.spec.kind()).or_default() += 1;
        }
    }
    for (k, n) in per_kind {
        println!("  {k}: {n} injection(s)");
    }
    let axial: usize = m.entries.iter().map(|e| e.affected.axial.len()).sum();
    let sagittal: usize = m.entries.iter().map(|e| e.affected.sagittal.len()).sum();
    println!("  artifactual slices: {axial} axial, {sagittal} sagittal");
}

fn load_config(path: &Path) -> CliResult<ExperimentConfig> {
    if !path.is_file() {
        return Err(usage(format!("config {} not found", path.display())));
    }
    Ok(ExperimentConfig::load(path)?)
}

fn check_dataset(d: &DatasetSpec) -> CliResult {
    if !d.labels.is_file() {
        return Err(usage(format!("dataset '{}': label CSV {} not found", d.id, d.labels.display())));
    }
    if !d.volumes.is_dir() {
        return Err(usage(format!(
            "dataset '{}': volume directory {} not found",
            d.id,
            d.volumes.display()
        )));
    }
    Ok(())
}

fn load_samples(sets: &[DatasetSpec], view: View) -> CliResult<Vec<SliceSample>> {
    let mut out = Vec::new();
    for d in sets {
        check_dataset(d)?;
        out.extend(load_dataset(d, view)?);
    }
    Ok(out)
}

fn backbone_for(cfg: &ExperimentConfig) -> CliResult<Option<Backbone>> {
    if !cfg.backend.backend().needs_backbone() {
        return Ok(None);
    }
    let spec = cfg
        .backbone
        .as_ref()
        .ok_or_else(|| usage(format!("backend {} needs a backbone entry", cfg.backend.backend())))?;
    Ok(Some(load_backbone(spec)?))
}

/// Artifact kinds labelled in `view` according to the datasets' manifests.
fn covered_kinds(sets: &[DatasetSpec], view: View) -> BTreeSet<ArtifactKind> {
    sets.iter()
        .filter_map(|d| d.labels.parent().map(|p| p.join("manifest.json")))
        .filter_map(|p| BenchmarkManifest::read(p).ok())
        .flat_map(|m| m.mix.into_iter().filter(|(_, f)| *f > 0.0).map(|(k, _)| k))
        .filter(|k| k.label_view() == view)
        .collect()
}

fn describe_training(spec: &BackendSpec) -> String {
    match spec {
        BackendSpec::CnnHead { head, train } | BackendSpec::GaborFc { head, train, .. } => format!(
            "epochs={} lr={} batch_size={} rho={} epsilon={} class_balance={:?} hidden_units={} dropout={} seed={}",
            train.epochs,
            train.learning_rate,
            train.batch_size,
            train.rho,
            train.epsilon,
            train.class_balance,
            head.hidden_units,
            head.dropout_rate,
            train.seed
        ),
        BackendSpec::GaborRf { rf, .. } | BackendSpec::ZernikeRf { rf, .. } | BackendSpec::LbpRf { rf, .. } => {
            format!("trees={} max_depth={:?} seed={}", rf.n_trees, rf.max_depth, rf.seed)
        }
        BackendSpec::CnnPcaSvm { pca, svm } => format!(
            "variance_target={} kernel={:?} C={}",
            pca.variance_target, svm.kernel, svm.c
        ),
    }
}

fn apply_overrides(cfg: &mut ExperimentConfig, view: Option<ViewArg>, backend: Option<&str>) -> CliResult {
    if let Some(v) = view {
        cfg.view = v.into();
    }
    if let Some(b) = backend {
        let b: Backend = b.parse()?;
        if b != cfg.backend.backend() {
            cfg.backend = BackendSpec::default_for(b).with_seed(cfg.seed);
        }
    }
    cfg.validate()?;
    Ok(())
}

fn augmented(cfg: &ExperimentConfig, samples: Vec<SliceSample>, key: &str) -> CliResult<Vec<SliceSample>> {
    if cfg.augment.multiplier == 0 {
        return Ok(samples);
    }
    Ok(augment_dataset(&samples, &cfg.augment, derive_seed(cfg.seed, key))?)
}

fn train_model(cfg: &ExperimentConfig, backbone: Option<&Backbone>) -> CliResult<(DetectorModel, Vec<SliceSample>)> {
    if cfg.datasets.is_empty() {
        return Err(usage("config lists no training datasets"));
    }
    let samples = load_samples(&cfg.datasets, cfg.view)?;
    let train = augmented(cfg, samples, "augment-train")?;
    log::debug!(
        "training {} detector for {} slices: {}",
        cfg.backend.backend(),
        cfg.view,
        describe_training(&cfg.backend)
    );
    let model = train_detector(&cfg.backend, cfg.view, &train, backbone)?
        .with_artifacts(covered_kinds(&cfg.datasets, cfg.view));
    Ok((model, train))
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn train(a: TrainArgs) -> CliResult {
    let mut cfg = load_config(&a.config)?;
    apply_overrides(&mut cfg, a.view, a.backend.as_deref())?;
    let backbone = backbone_for(&cfg)?;
    println!(
        "training {} ({}): {}",
        cfg.backend.backend(),
        cfg.view,
        describe_training(&cfg.backend)
    );
    let (model, train) = train_model(&cfg, backbone.as_ref())?;
    model.save(&a.out_model)?;
    for (epoch, loss) in model.summary.epoch_losses.iter().enumerate() {
        println!("epoch {:>3}: loss {loss:.6}", epoch + 1);
    }
    let log = serde_json::json!({
        "version": 1,
        "config": cfg.materialized(),
        "training_samples": train.len(),
        "fingerprint": model.fingerprint,
        "summary": model.summary,
    });
    let log_path = sidecar(&a.out_model, ".train.json");
    dwiqc::pipeline::write_atomic(&log_path, &serde_json::to_vec_pretty(&log).map_err(QcError::from)?)?;
    println!(
        "saved {} ({} training slices); log {}",
        a.out_model.display(),
        train.len(),
        log_path.display()
    );
    Ok(())
}

fn load_classifier(spec: &str, view: View) -> CliResult<Box<dyn SliceClassifier>> {
    if let Some(path) = spec.strip_prefix("oracle:") {
        let path = Path::new(path);
        if !path.is_file() {
            return Err(usage(format!("oracle labels {} not found", path.display())));
        }
        return Ok(Box::new(LabelOracle::from_csv(path, Some(view))?));
    }
    let path = Path::new(spec);
    if !path.is_file() {
        return Err(usage(format!("{view} model {} not found", path.display())));
    }
    let model = load_model(path)?;
    if model.view != view {
        return Err(usage(format!("{} is a {} model, expected {view}", path.display(), model.view)));
    }
    Ok(Box::new(model))
}

pub fn qc(a: QcArgs) -> CliResult {
    if !a.input.exists() {
        return Err(usage(format!("input {} not found", a.input.display())));
    }
    let paths = if a.input.is_dir() {
        list_volumes(&a.input)?
    } else {
        vec![a.input.clone()]
    };
    if paths.is_empty() {
        return Err(QcError::NoInput(format!("no NIfTI volumes in {}", a.input.display())).into());
    }
    let axial = load_classifier(&a.axial_model, View::Axial)?;
    let sagittal = load_classifier(&a.sagittal_model, View::Sagittal)?;
    let thresholds = ThresholdConfig {
        axial_slice_count: a.axial_threshold,
        sagittal_slice_count: a.sagittal_threshold,
    };
    let rule = ExclusionRule::default();
    for path in paths {
        let vol = load_dwi(&path)?;
        let report = qc_volume(&vol, axial.as_ref(), sagittal.as_ref(), &rule, &thresholds)?;
        let files = write_report(&report, Some(&vol), &a.report_dir.join(&vol.id), a.thumbnails)?;
        let flagged: Vec<String> = report
            .verdicts
            .iter()
            .filter(|v| v.flag)
            .map(|v| format!("{}:{}", v.view, v.gradient))
            .collect();
        println!(
            "{}: {} slice(s) scored, {} flagged, volume verdicts [{}] -> {}",
            vol.id,
            report.slices.len(),
            report.flagged().count(),
            flagged.join(" "),
            files.report.display()
        );
    }
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> CliResult {
    let mut cfg = load_config(&a.config)?;
    if let Some(out) = &a.out {
        cfg.output_dir = out.clone();
    }
    if cfg.datasets.is_empty() {
        return Err(usage("config lists no training datasets"));
    }
    std::fs::create_dir_all(&cfg.output_dir)?;
    cfg.save(&cfg.output_dir.join("config.json"))?;
    let backbone = backbone_for(&cfg)?;
    let trainer = DetectorTrainer {
        spec: cfg.backend.clone(),
        view: cfg.view,
        backbone: backbone.as_ref(),
    };
    let augment = (cfg.augment.multiplier > 0).then_some(&cfg.augment);
    let out = &cfg.output_dir;
    match a.mode {
        EvalMode::Cv => {
            let samples = load_samples(&cfg.datasets, cfg.view)?;
            let report = cross_validate(&samples, &trainer, &cfg.folds, augment)?;
            let (csv, _) = report.write(out)?;
            for f in &report.folds {
                match &f.metrics {
                    Some(m) => println!("fold {}: accuracy {}", f.fold, fmt_rate(m.accuracy)),
                    None => println!("fold {}: skipped", f.fold),
                }
            }
            println!(
                "mean: accuracy {} precision {} recall {} -> {}",
                fmt_rate(report.mean.accuracy),
                fmt_rate(report.mean.precision),
                fmt_rate(report.mean.recall),
                csv.display()
            );
        }
        EvalMode::CrossDataset => {
            if cfg.test_datasets.is_empty() {
                return Err(usage("cross-dataset mode needs test_datasets"));
            }
            let train: Vec<(String, Vec<SliceSample>)> = cfg
                .datasets
                .iter()
                .map(|d| Ok((d.id.clone(), load_samples(std::slice::from_ref(d), cfg.view)?)))
                .collect::<CliResult<_>>()?;
            let sets: Vec<(&str, &[SliceSample])> = train.iter().map(|(id, s)| (id.as_str(), s.as_slice())).collect();
            for t in &cfg.test_datasets {
                let test = load_samples(std::slice::from_ref(t), cfg.view)?;
                let report = cross_dataset_eval(&sets, (&t.id, &test), &trainer, augment, cfg.seed)?;
                let (csv, _) = report.write(out)?;
                println!(
                    "{} -> {}: accuracy {} -> {}",
                    report.train_datasets.join("+"),
                    t.id,
                    fmt_rate(report.metrics.accuracy),
                    csv.display()
                );
            }
        }
        EvalMode::Sweep => {
            let (samples, probs) = if cfg.test_datasets.is_empty() {
                let samples = load_samples(&cfg.datasets, cfg.view)?;
                let probs = out_of_fold_probabilities(&samples, &trainer, &cfg.folds, augment)?;
                (samples, probs)
            } else {
                let (model, _) = train_model(&cfg, backbone.as_ref())?;
                let samples = load_samples(&cfg.test_datasets, cfg.view)?;
                let probs = model.predict_proba(&samples)?;
                (samples, probs)
            };
            let flags = volume_flags_from_predictions(&samples, &probs)?;
            let report = threshold_sweep(&flags, &cfg.sweep_thresholds, cfg.view)?;
            let (csv, _) = report.write(out)?;
            for r in &report.rows {
                println!(
                    "T={:>2}: flagged {:>3}/{} recall {} accuracy {}",
                    r.threshold,
                    r.flagged,
                    report.volumes,
                    fmt_rate(r.metrics.recall),
                    fmt_rate(r.metrics.accuracy)
                );
            }
            println!("-> {}", csv.display());
        }
        EvalMode::Finetune => {
            let target = cfg
                .test_datasets
                .first()
                .ok_or_else(|| usage("finetune mode needs a test dataset"))?;
            let (model, base) = match &cfg.finetune.base_model {
                Some(p) => {
                    if !p.is_file() {
                        return Err(usage(format!("base model {} not found", p.display())));
                    }
                    let m = load_model(p)?;
                    let base = augmented(&cfg, load_samples(&cfg.datasets, m.view)?, "augment-train")?;
                    (m, base)
                }
                None => train_model(&cfg, backbone.as_ref())?,
            };
            let new = match &cfg.finetune.new_labels {
                Some(p) => {
                    if !p.is_file() {
                        return Err(usage(format!("label file {} not found", p.display())));
                    }
                    load_labeled_samples(&target.volumes, &read_labels(p)?, model.view)?
                }
                None => load_samples(std::slice::from_ref(target), model.view)?,
            };
            let outcome = finetune_eval(&model, &base, (&target.id, &new), cfg.finetune.fraction, cfg.finetune.seed)?;
            let (csv, _) = outcome.report.write(out)?;
            let model_path = out.join(format!("finetuned_{}.dwqc", model.view));
            outcome.model.save(&model_path)?;
            println!(
                "fine-tuned on {} of {} '{}' slices; held-out accuracy {} -> {} ({}); model {}",
                outcome.report.sampled,
                new.len(),
                target.id,
                fmt_rate(outcome.report.before.accuracy),
                fmt_rate(outcome.report.after.accuracy),
                csv.display(),
                model_path.display()
            );
        }
    }
    Ok(())
}

fn fmt_rate(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |x| format!("{x:.4}"))
}
