//! Metrics, grouped k-fold cross-validation, slice-count threshold sweeps,
//! cross-dataset evaluation and the fine-tune comparison.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_dataset, AugmentConfig};
use crate::error::{QcError, Result};
use crate::labels::LabelRecord;
use crate::learning::{
    finetune, flag_from_prob, train_detector, Backbone, BackendSpec, DetectorModel, LabelOracle, SliceClassifier,
};
use crate::pipeline::{volume_flag, write_atomic, QcReport};
use crate::rng::{derive_seed, stream};
use crate::volume::{SliceKey, SliceSample, View};

pub const EVAL_SCHEMA_VERSION: u32 = 1;

/// Confusion counts with derived rates. A rate with a zero denominator is
/// `None`, never a silent 0 or 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub accuracy: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        Metrics {
            tp,
            fp,
            tn,
            fn_,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn compute_metrics(predicted: &[bool], truth: &[bool]) -> Result<Metrics> {
    if predicted.len() != truth.len() {
        return Err(QcError::invalid(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(QcError::NoInput("no predictions to score".into()));
    }
    let mut c = [0usize; 4];
    for (&p, &t) in predicted.iter().zip(truth) {
        c[usize::from(p) * 2 + usize::from(t)] += 1;
    }
    // index = pred * 2 + truth
    Ok(Metrics::from_counts(c[3], c[2], c[0], c[1]))
}

fn truth_of(samples: &[SliceSample]) -> Result<Vec<bool>> {
    samples
        .iter()
        .map(|s| {
            s.label
                .map(|l| l.is_artifact())
                .ok_or_else(|| QcError::Labels(format!("slice {} has no label", s.key)))
        })
        .collect()
}

/// Scores `model` on labelled samples with the slice rule `p > 0.5`.
pub fn evaluate_slices(model: &dyn SliceClassifier, samples: &[SliceSample]) -> Result<Metrics> {
    let truth = truth_of(samples)?;
    let pred: Vec<bool> = model.predict_proba(samples)?.into_iter().map(flag_from_prob).collect();
    compute_metrics(&pred, &truth)
}

/// Unweighted mean over folds of each defined rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub accuracy: Option<f64>,
}

impl MeanMetrics {
    pub fn macro_mean<'a>(metrics: impl IntoIterator<Item = &'a Metrics>) -> Self {
        let ms: Vec<&Metrics> = metrics.into_iter().collect();
        let mean = |f: fn(&Metrics) -> Option<f64>| {
            let v: Vec<f64> = ms.iter().filter_map(|m| f(m)).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        MeanMetrics {
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            accuracy: mean(|m| m.accuracy),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// Slices shuffled independently; one volume may span folds.
    Slice,
    /// All slices of one volume in one fold.
    #[default]
    Subject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoldSpec {
    pub k: usize,
    pub seed: u64,
    pub grouping: Grouping,
}

impl Default for FoldSpec {
    fn default() -> Self {
        FoldSpec {
            k: 5,
            seed: 0,
            grouping: Grouping::Subject,
        }
    }
}

/// Partitions sample indices into `k` folds. Units (slices or volumes) are
/// shuffled with the spec seed and dealt round-robin, so fold sizes in units
/// differ by at most one. Indices inside a fold keep input order.
pub fn kfold_split(samples: &[SliceSample], spec: &FoldSpec) -> Result<Vec<Vec<usize>>> {
    if spec.k < 2 {
        return Err(QcError::Config(format!("k = {} must be at least 2", spec.k)));
    }
    let unit_of: Vec<usize> = match spec.grouping {
        Grouping::Slice => (0..samples.len()).collect(),
        Grouping::Subject => {
            let ids: BTreeSet<&str> = samples.iter().map(|s| s.key.volume_id.as_str()).collect();
            let pos: BTreeMap<&str, usize> = ids.into_iter().enumerate().map(|(i, id)| (id, i)).collect();
            samples.iter().map(|s| pos[s.key.volume_id.as_str()]).collect()
        }
    };
    let n_units = unit_of.iter().max().map_or(0, |m| m + 1);
    if n_units < spec.k {
        return Err(QcError::invalid(format!(
            "{n_units} {} unit(s) cannot fill {} folds",
            match spec.grouping {
                Grouping::Slice => "slice",
                Grouping::Subject => "subject",
            },
            spec.k
        )));
    }
    let mut order: Vec<usize> = (0..n_units).collect();
    order.shuffle(&mut stream(spec.seed, "kfold"));
    let mut fold_of = vec![0; n_units];
    for (p, &u) in order.iter().enumerate() {
        fold_of[u] = p % spec.k;
    }
    let mut folds = vec![Vec::new(); spec.k];
    for (i, &u) in unit_of.iter().enumerate() {
        folds[fold_of[u]].push(i);
    }
    Ok(folds)
}

/// Fits a classifier on a training split.
pub trait Trainer: Sync {
    fn name(&self) -> String;
    fn train(&self, samples: &[SliceSample]) -> Result<Box<dyn SliceClassifier>>;
}

pub struct DetectorTrainer<'a> {
    pub spec: BackendSpec,
    pub view: View,
    pub backbone: Option<&'a Backbone>,
}

impl Trainer for DetectorTrainer<'_> {
    fn name(&self) -> String {
        self.spec.backend().to_string()
    }

    fn train(&self, samples: &[SliceSample]) -> Result<Box<dyn SliceClassifier>> {
        Ok(Box::new(train_detector(&self.spec, self.view, samples, self.backbone)?))
    }
}

/// Answers from the labels of whatever it is asked about. Only useful to
/// check evaluation plumbing.
pub struct OracleTrainer {
    pub records: Vec<LabelRecord>,
}

impl Trainer for OracleTrainer {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn train(&self, _samples: &[SliceSample]) -> Result<Box<dyn SliceClassifier>> {
        Ok(Box::new(LabelOracle::from_records(&self.records, None)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub metrics: Option<Metrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub version: u32,
    pub model: String,
    pub folds_spec: FoldSpec,
    pub augmented: bool,
    pub folds: Vec<FoldResult>,
    pub mean: MeanMetrics,
}

/// k-fold cross-validation. Only training folds are augmented. A fold whose
/// training part holds a single class is skipped with a warning.
pub fn cross_validate(
    samples: &[SliceSample],
    trainer: &dyn Trainer,
    folds_spec: &FoldSpec,
    augment: Option<&AugmentConfig>,
) -> Result<CvReport> {
    truth_of(samples)?;
    let folds = kfold_split(samples, folds_spec)?;
    let mut results = Vec::with_capacity(folds.len());
    for (f, test_idx) in folds.iter().enumerate() {
        let in_test: BTreeSet<usize> = test_idx.iter().copied().collect();
        let train: Vec<SliceSample> = (0..samples.len())
            .filter(|i| !in_test.contains(i))
            .map(|i| samples[i].clone())
            .collect();
        let test: Vec<SliceSample> = test_idx.iter().map(|&i| samples[i].clone()).collect();
        let positives = train.iter().filter(|s| s.label.is_some_and(|l| l.is_artifact())).count();
        if positives == 0 || positives == train.len() {
            let reason = format!("training fold {f} holds a single class");
            log::warn!("{reason}; fold skipped");
            results.push(FoldResult {
                fold: f,
                train_size: train.len(),
                test_size: test.len(),
                metrics: None,
                skipped: Some(reason),
            });
            continue;
        }
        let train = match augment {
            Some(cfg) if cfg.multiplier > 0 => {
                augment_dataset(&train, cfg, derive_seed(folds_spec.seed, &format!("augment-fold-{f}")))?
            }
            _ => train,
        };
        let model = trainer.train(&train)?;
        let metrics = evaluate_slices(model.as_ref(), &test)?;
        log::info!(
            "fold {f}: train {} test {} accuracy {:?}",
            train.len(),
            test.len(),
            metrics.accuracy
        );
        results.push(FoldResult {
            fold: f,
            train_size: train.len(),
            test_size: test.len(),
            metrics: Some(metrics),
            skipped: None,
        });
    }
    if results.iter().all(|r| r.metrics.is_none()) {
        return Err(QcError::SingleClass("every training fold".into()));
    }
    let mean = MeanMetrics::macro_mean(results.iter().filter_map(|r| r.metrics.as_ref()));
    Ok(CvReport {
        version: EVAL_SCHEMA_VERSION,
        model: trainer.name(),
        folds_spec: *folds_spec,
        augmented: augment.is_some_and(|a| a.multiplier > 0),
        folds: results,
        mean,
    })
}

/// Probability for every sample from the fold model that did not train on it.
pub fn out_of_fold_probabilities(
    samples: &[SliceSample],
    trainer: &dyn Trainer,
    folds_spec: &FoldSpec,
    augment: Option<&AugmentConfig>,
) -> Result<Vec<f64>> {
    let folds = kfold_split(samples, folds_spec)?;
    let mut probs = vec![f64::NAN; samples.len()];
    for (f, test_idx) in folds.iter().enumerate() {
        let in_test: BTreeSet<usize> = test_idx.iter().copied().collect();
        let train: Vec<SliceSample> = (0..samples.len())
            .filter(|i| !in_test.contains(i))
            .map(|i| samples[i].clone())
            .collect();
        let train = match augment {
            Some(cfg) if cfg.multiplier > 0 => {
                augment_dataset(&train, cfg, derive_seed(folds_spec.seed, &format!("augment-fold-{f}")))?
            }
            _ => train,
        };
        let model = trainer.train(&train)?;
        let test: Vec<SliceSample> = test_idx.iter().map(|&i| samples[i].clone()).collect();
        for (&i, p) in test_idx.iter().zip(model.predict_proba(&test)?) {
            probs[i] = p;
        }
    }
    Ok(probs)
}

/// Flagged-slice count of one gradient image in one view, with its truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VolumeFlags {
    pub volume_id: String,
    pub view: View,
    pub gradient: usize,
    pub flag_count: usize,
    /// At least one slice of this gradient and view is labelled artifactual.
    pub truth: bool,
}

/// Groups scored slices into per-gradient counts.
pub fn volume_flags_from_predictions(samples: &[SliceSample], probs: &[f64]) -> Result<Vec<VolumeFlags>> {
    if samples.len() != probs.len() {
        return Err(QcError::invalid("one probability per sample required"));
    }
    let truth = truth_of(samples)?;
    let mut acc: BTreeMap<(String, View, usize), (usize, bool)> = BTreeMap::new();
    for ((s, &p), t) in samples.iter().zip(probs).zip(truth) {
        let e = acc
            .entry((s.key.volume_id.clone(), s.key.view, s.key.gradient_index))
            .or_default();
        e.0 += usize::from(flag_from_prob(p));
        e.1 |= t;
    }
    Ok(acc
        .into_iter()
        .map(|((volume_id, view, gradient), (flag_count, truth))| VolumeFlags {
            volume_id,
            view,
            gradient,
            flag_count,
            truth,
        })
        .collect())
}

/// Per-gradient counts of a report, with truth taken from slice labels.
pub fn volume_flags_from_report(report: &QcReport, labels: &[LabelRecord]) -> Vec<VolumeFlags> {
    let positive: BTreeSet<(View, usize)> = labels
        .iter()
        .filter(|r| r.volume_id == report.volume_id && r.label.is_artifact())
        .map(|r| (r.view, r.gradient_index))
        .collect();
    report
        .flag_counts()
        .into_iter()
        .map(|((view, gradient), flag_count)| VolumeFlags {
            volume_id: report.volume_id.clone(),
            view,
            gradient,
            flag_count,
            truth: positive.contains(&(view, gradient)),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: usize,
    pub flagged: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub version: u32,
    pub view: View,
    pub volumes: usize,
    pub rows: Vec<SweepRow>,
}

/// Volume-level metrics for each slice-count threshold. Asserts that flagged
/// sets shrink and recall never rises as the threshold grows.
pub fn threshold_sweep(volumes: &[VolumeFlags], thresholds: &[usize], view: View) -> Result<SweepReport> {
    if thresholds.is_empty() {
        return Err(QcError::invalid("threshold list is empty"));
    }
    let vols: Vec<&VolumeFlags> = volumes.iter().filter(|v| v.view == view).collect();
    if vols.is_empty() {
        return Err(QcError::NoInput(format!("no {view} volumes to sweep")));
    }
    let truth: Vec<bool> = vols.iter().map(|v| v.truth).collect();
    let mut rows: Vec<SweepRow> = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let pred: Vec<bool> = vols.iter().map(|v| volume_flag(v.flag_count, t)).collect();
        rows.push(SweepRow {
            threshold: t,
            flagged: pred.iter().filter(|&&p| p).count(),
            metrics: compute_metrics(&pred, &truth)?,
        });
    }
    let mut by_t: Vec<&SweepRow> = rows.iter().collect();
    by_t.sort_by_key(|r| r.threshold);
    for w in by_t.windows(2) {
        let nested = vols
            .iter()
            .all(|v| !volume_flag(v.flag_count, w[1].threshold) || volume_flag(v.flag_count, w[0].threshold));
        let recall_ok = match (w[0].metrics.recall, w[1].metrics.recall) {
            (Some(a), Some(b)) => b <= a,
            _ => true,
        };
        if !nested || !recall_ok {
            return Err(QcError::Invariant(format!(
                "flagging not monotone between thresholds {} and {}",
                w[0].threshold, w[1].threshold
            )));
        }
    }
    Ok(SweepReport {
        version: EVAL_SCHEMA_VERSION,
        view,
        volumes: vols.len(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossDatasetReport {
    pub version: u32,
    pub model: String,
    pub train_datasets: Vec<String>,
    pub test_dataset: String,
    pub train_size: usize,
    pub test_size: usize,
    pub metrics: Metrics,
}

fn check_disjoint(train_ids: &[&str], test_id: &str) -> Result<()> {
    if train_ids.contains(&test_id) {
        return Err(QcError::Leakage(format!("dataset '{test_id}' is used for training and testing")));
    }
    Ok(())
}

/// Trains on the union of `train_sets` and scores `test`.
pub fn cross_dataset_eval(
    train_sets: &[(&str, &[SliceSample])],
    test: (&str, &[SliceSample]),
    trainer: &dyn Trainer,
    augment: Option<&AugmentConfig>,
    seed: u64,
) -> Result<CrossDatasetReport> {
    let ids: Vec<&str> = train_sets.iter().map(|(id, _)| *id).collect();
    check_disjoint(&ids, test.0)?;
    let mut union: Vec<SliceSample> = train_sets.iter().flat_map(|(_, s)| s.iter().cloned()).collect();
    let train_size = union.len();
    if let Some(cfg) = augment.filter(|a| a.multiplier > 0) {
        union = augment_dataset(&union, cfg, derive_seed(seed, "augment-cross-dataset"))?;
    }
    let model = trainer.train(&union)?;
    Ok(CrossDatasetReport {
        version: EVAL_SCHEMA_VERSION,
        model: trainer.name(),
        train_datasets: ids.iter().map(|s| s.to_string()).collect(),
        test_dataset: test.0.to_string(),
        train_size,
        test_size: test.1.len(),
        metrics: evaluate_slices(model.as_ref(), test.1)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub version: u32,
    pub model: String,
    pub new_dataset: String,
    pub fraction: f64,
    pub seed: u64,
    pub sampled: usize,
    pub test_size: usize,
    pub before: Metrics,
    pub after: Metrics,
}

pub struct FinetuneOutcome {
    pub model: DetectorModel,
    pub sampled: Vec<SliceKey>,
    pub report: FinetuneReport,
}

/// Fine-tunes on `base` plus a stratified `fraction` of `new`, then scores
/// the original and tuned models on the rest of `new`.
pub fn finetune_eval(
    model: &DetectorModel,
    base: &[SliceSample],
    new: (&str, &[SliceSample]),
    fraction: f64,
    seed: u64,
) -> Result<FinetuneOutcome> {
    let (tuned, sampled) = finetune(model, base, new.1, fraction, seed)?;
    let used: BTreeSet<&SliceKey> = sampled.iter().collect();
    let test: Vec<SliceSample> = new.1.iter().filter(|s| !used.contains(&s.key)).cloned().collect();
    if test.iter().any(|s| used.contains(&s.key)) || test.len() + sampled.len() != new.1.len() {
        return Err(QcError::Leakage("fine-tune samples overlap the evaluation set".into()));
    }
    if test.is_empty() {
        return Err(QcError::NoInput("no held-out samples left after fine-tune sampling".into()));
    }
    let report = FinetuneReport {
        version: EVAL_SCHEMA_VERSION,
        model: model.backend.to_string(),
        new_dataset: new.0.to_string(),
        fraction,
        seed,
        sampled: sampled.len(),
        test_size: test.len(),
        before: evaluate_slices(model, &test)?,
        after: evaluate_slices(&tuned, &test)?,
    };
    Ok(FinetuneOutcome {
        model: tuned,
        sampled,
        report,
    })
}

const METRIC_COLUMNS: &str = "tp,fp,tn,fn,precision,recall,accuracy";

fn rate(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x}"))
}

fn metric_cells(m: Option<&Metrics>) -> String {
    match m {
        Some(m) => format!(
            "{},{},{},{},{},{},{}",
            m.tp,
            m.fp,
            m.tn,
            m.fn_,
            rate(m.precision),
            rate(m.recall),
            rate(m.accuracy)
        ),
        None => "NA,NA,NA,NA,NA,NA,NA".into(),
    }
}

fn write_pair<T: Serialize>(dir: &Path, stem: &str, csv: &str, summary: &T) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let c = dir.join(format!("{stem}.csv"));
    let j = dir.join(format!("{stem}.json"));
    write_atomic(&c, csv.as_bytes())?;
    write_atomic(&j, &serde_json::to_vec_pretty(summary)?)?;
    Ok((c, j))
}

impl CvReport {
    /// `cv.csv` with one row per fold and `cv.json`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        let mut s = format!("version,fold,train_size,test_size,{METRIC_COLUMNS},skipped\n");
        for f in &self.folds {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                self.version,
                f.fold,
                f.train_size,
                f.test_size,
                metric_cells(f.metrics.as_ref()),
                f.skipped.as_deref().unwrap_or("")
            );
        }
        write_pair(dir, "cv", &s, self)
    }
}

impl SweepReport {
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        let mut s = format!("version,view,threshold,flagged,{METRIC_COLUMNS}\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                self.version,
                self.view,
                r.threshold,
                r.flagged,
                metric_cells(Some(&r.metrics))
            );
        }
        write_pair(dir, &format!("sweep_{}", self.view), &s, self)
    }
}

impl CrossDatasetReport {
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        let s = format!(
            "version,train_datasets,test_dataset,train_size,test_size,{METRIC_COLUMNS}\n{},{},{},{},{},{}\n",
            self.version,
            self.train_datasets.join("+"),
            self.test_dataset,
            self.train_size,
            self.test_size,
            metric_cells(Some(&self.metrics))
        );
        write_pair(dir, &format!("cross_dataset_{}", self.test_dataset), &s, self)
    }
}

impl FinetuneReport {
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        let mut s = format!("version,stage,sampled,test_size,{METRIC_COLUMNS}\n");
        for (stage, m) in [("before", &self.before), ("after", &self.after)] {
            let _ = writeln!(
                s,
                "{},{stage},{},{},{}",
                self.version,
                self.sampled,
                self.test_size,
                metric_cells(Some(m))
            );
        }
        write_pair(dir, &format!("finetune_{}", self.new_dataset), &s, self)
    }
}
