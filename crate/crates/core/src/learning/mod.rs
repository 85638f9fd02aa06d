//! Slice classifiers: frozen-backbone CNN head, texture features with a
//! random forest, Gabor features with a fully connected head, and PCA of
//! backbone features with an SVM.

mod backbone;
mod forest;
mod head;
mod oracle;
mod pca;
mod svm;

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{QcError, Result};
use crate::features::{DescriptorConfig, FeatureExtractor, GaborConfig, LbpConfig, ZernikeConfig};
use crate::rng::stream;
use crate::sim::ArtifactKind;
use crate::volume::{normalize_pixels, SliceKey, SliceSample, View};

pub use backbone::{load_backbone, make_backbone_asset, Backbone, FeatureBackbone, DEFAULT_CHANNELS, DEFAULT_INPUT};
pub use forest::{RandomForest, RfConfig};
pub use head::{train_head, ClassBalance, HeadConfig, HeadTrainLog, Mlp, TrainConfig};
pub use oracle::LabelOracle;
pub use pca::{choose_components, Pca, PcaConfig};
pub use svm::{Kernel, Svm, SvmConfig};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MODEL_MAGIC: &[u8; 8] = b"DWQCMODL";

/// Anything that scores slices with `P(artifactual)`.
pub trait SliceClassifier: Send + Sync {
    /// View this classifier is bound to; `None` accepts both.
    fn view(&self) -> Option<View>;
    /// Identification recorded in reports.
    fn describe(&self) -> serde_json::Value;
    fn predict_proba(&self, samples: &[SliceSample]) -> Result<Vec<f64>>;
}

pub(crate) fn check_views(expected: Option<View>, samples: &[SliceSample]) -> Result<()> {
    if let Some(v) = expected {
        if let Some(s) = samples.iter().find(|s| s.key.view != v) {
            return Err(QcError::ViewMismatch {
                expected: v.to_string(),
                actual: s.key.view.to_string(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlicePrediction {
    pub prob_artifact: f64,
    pub prob_clean: f64,
    pub flag: bool,
}

/// Slice flag rule: strictly above one half.
pub fn flag_from_prob(prob: f64) -> bool {
    prob > 0.5
}

pub fn predict_slice(model: &dyn SliceClassifier, sample: &SliceSample) -> Result<SlicePrediction> {
    let p = model.predict_proba(std::slice::from_ref(sample))?[0];
    Ok(SlicePrediction {
        prob_artifact: p,
        prob_clean: 1.0 - p,
        flag: flag_from_prob(p),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    CnnHead,
    GaborRf,
    ZernikeRf,
    LbpRf,
    GaborFc,
    CnnPcaSvm,
}

impl Backend {
    pub const ALL: [Backend; 6] = [
        Backend::CnnHead,
        Backend::GaborRf,
        Backend::ZernikeRf,
        Backend::LbpRf,
        Backend::GaborFc,
        Backend::CnnPcaSvm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Backend::CnnHead => "cnn_head",
            Backend::GaborRf => "gabor_rf",
            Backend::ZernikeRf => "zernike_rf",
            Backend::LbpRf => "lbp_rf",
            Backend::GaborFc => "gabor_fc",
            Backend::CnnPcaSvm => "cnn_pca_svm",
        }
    }

    pub fn needs_backbone(self) -> bool {
        matches!(self, Backend::CnnHead | Backend::CnnPcaSvm)
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Backend {
    type Err = QcError;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase().replace('-', "_");
        Backend::ALL
            .into_iter()
            .find(|b| b.as_str() == t)
            .ok_or_else(|| QcError::Config(format!("unknown backend '{s}'")))
    }
}

/// Backend choice plus its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    CnnHead {
        #[serde(default)]
        head: HeadConfig,
        #[serde(default)]
        train: TrainConfig,
    },
    GaborRf {
        #[serde(default)]
        gabor: GaborConfig,
        #[serde(default)]
        rf: RfConfig,
    },
    ZernikeRf {
        #[serde(default)]
        zernike: ZernikeConfig,
        #[serde(default)]
        rf: RfConfig,
    },
    LbpRf {
        #[serde(default)]
        lbp: LbpConfig,
        #[serde(default)]
        rf: RfConfig,
    },
    GaborFc {
        #[serde(default)]
        gabor: GaborConfig,
        #[serde(default)]
        head: HeadConfig,
        #[serde(default)]
        train: TrainConfig,
    },
    CnnPcaSvm {
        #[serde(default)]
        pca: PcaConfig,
        #[serde(default)]
        svm: SvmConfig,
    },
}

impl BackendSpec {
    pub fn default_for(backend: Backend) -> Self {
        match backend {
            Backend::CnnHead => BackendSpec::CnnHead {
                head: HeadConfig::default(),
                train: TrainConfig::default(),
            },
            Backend::GaborRf => BackendSpec::GaborRf {
                gabor: GaborConfig::default(),
                rf: RfConfig::default(),
            },
            Backend::ZernikeRf => BackendSpec::ZernikeRf {
                zernike: ZernikeConfig::default(),
                rf: RfConfig::default(),
            },
            Backend::LbpRf => BackendSpec::LbpRf {
                lbp: LbpConfig::default(),
                rf: RfConfig::default(),
            },
            Backend::GaborFc => BackendSpec::GaborFc {
                gabor: GaborConfig::default(),
                head: HeadConfig::default(),
                train: TrainConfig::default(),
            },
            Backend::CnnPcaSvm => BackendSpec::CnnPcaSvm {
                pca: PcaConfig::default(),
                svm: SvmConfig::default(),
            },
        }
    }

    pub fn backend(&self) -> Backend {
        match self {
            BackendSpec::CnnHead { .. } => Backend::CnnHead,
            BackendSpec::GaborRf { .. } => Backend::GaborRf,
            BackendSpec::ZernikeRf { .. } => Backend::ZernikeRf,
            BackendSpec::LbpRf { .. } => Backend::LbpRf,
            BackendSpec::GaborFc { .. } => Backend::GaborFc,
            BackendSpec::CnnPcaSvm { .. } => Backend::CnnPcaSvm,
        }
    }

    /// Seed driving the stochastic part of training (0 for PCA+SVM, which is
    /// deterministic).
    pub fn seed(&self) -> u64 {
        match self {
            BackendSpec::CnnHead { train, .. } | BackendSpec::GaborFc { train, .. } => train.seed,
            BackendSpec::GaborRf { rf, .. } | BackendSpec::ZernikeRf { rf, .. } | BackendSpec::LbpRf { rf, .. } => {
                rf.seed
            }
            BackendSpec::CnnPcaSvm { .. } => 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        match &mut self {
            BackendSpec::CnnHead { train, .. } | BackendSpec::GaborFc { train, .. } => train.seed = seed,
            BackendSpec::GaborRf { rf, .. } | BackendSpec::ZernikeRf { rf, .. } | BackendSpec::LbpRf { rf, .. } => {
                rf.seed = seed
            }
            BackendSpec::CnnPcaSvm { .. } => {}
        }
        self
    }

    fn descriptor(&self) -> Option<DescriptorConfig> {
        match self {
            BackendSpec::GaborRf { gabor, .. } | BackendSpec::GaborFc { gabor, .. } => {
                Some(DescriptorConfig::Gabor(gabor.clone()))
            }
            BackendSpec::ZernikeRf { zernike, .. } => Some(DescriptorConfig::Zernike(zernike.clone())),
            BackendSpec::LbpRf { lbp, .. } => Some(DescriptorConfig::Lbp(lbp.clone())),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BackendSpec::CnnHead { head, train } => {
                head.validate()?;
                train.validate()
            }
            BackendSpec::GaborFc { gabor, head, train } => {
                if gabor.dim() != 32 {
                    return Err(QcError::Config(format!(
                        "the Gabor+FC head takes 32 Gabor features, config yields {}",
                        gabor.dim()
                    )));
                }
                head.validate()?;
                train.validate()
            }
            _ => Ok(()),
        }
    }
}

/// How a model was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingFingerprint {
    /// SHA-256 of the backend spec JSON.
    pub config_hash: String,
    /// SHA-256 over the canonically ordered training keys, labels and pixels.
    pub data_hash: String,
    pub seed: u64,
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooling: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backbone_digest: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epoch_losses: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oob_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pca_components: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explained_variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum ModelParams {
    Head(Mlp),
    Forest(RandomForest),
    PcaSvm(Pca, Svm),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamBlob {
    backbone: Option<Backbone>,
    params: ModelParams,
}

#[derive(Debug)]
enum Featurizer {
    Backbone(Backbone),
    Classic(FeatureExtractor),
}

impl Featurizer {
    fn new(spec: &BackendSpec, backbone: Option<&Backbone>) -> Result<Self> {
        if spec.backend().needs_backbone() {
            let bb = backbone.ok_or_else(|| QcError::Config(format!("{} needs a backbone", spec.backend())))?;
            Ok(Featurizer::Backbone(bb.clone()))
        } else {
            let d = spec.descriptor().expect("classic backends have a descriptor");
            Ok(Featurizer::Classic(FeatureExtractor::new(&d)?))
        }
    }

    fn backbone(&self) -> Option<&Backbone> {
        match self {
            Featurizer::Backbone(b) => Some(b),
            Featurizer::Classic(_) => None,
        }
    }

    fn dim(&self) -> usize {
        match self {
            Featurizer::Backbone(b) => b.output_dim(),
            Featurizer::Classic(e) => e.dim(),
        }
    }

    fn one(&self, pixels: &Array2<f64>) -> Result<Vec<f64>> {
        match self {
            Featurizer::Backbone(b) => b.features(pixels),
            Featurizer::Classic(e) => Ok(e.extract(&normalize_pixels(pixels))?.values),
        }
    }

    fn matrix(&self, samples: &[SliceSample]) -> Result<Array2<f64>> {
        let rows: Vec<Vec<f64>> = samples.par_iter().map(|s| self.one(&s.pixels)).collect::<Result<_>>()?;
        let d = self.dim();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Array2::from_shape_vec((samples.len(), d), flat).map_err(|e| QcError::Invariant(e.to_string()))
    }
}

/// Computes the feature rows a backend would see for `samples`.
pub fn extract_features(spec: &BackendSpec, backbone: Option<&Backbone>, samples: &[SliceSample]) -> Result<Array2<f64>> {
    Featurizer::new(spec, backbone)?.matrix(samples)
}

/// A trained view-specific detector.
#[derive(Debug)]
pub struct DetectorModel {
    pub backend: Backend,
    pub view: View,
    pub artifacts_covered: BTreeSet<ArtifactKind>,
    pub spec: BackendSpec,
    pub fingerprint: TrainingFingerprint,
    pub summary: TrainingSummary,
    params: ModelParams,
    featurizer: Featurizer,
}

impl Clone for DetectorModel {
    fn clone(&self) -> Self {
        DetectorModel {
            backend: self.backend,
            view: self.view,
            artifacts_covered: self.artifacts_covered.clone(),
            spec: self.spec.clone(),
            fingerprint: self.fingerprint.clone(),
            summary: self.summary.clone(),
            params: self.params.clone(),
            featurizer: Featurizer::new(&self.spec, self.featurizer.backbone()).expect("spec already validated"),
        }
    }
}

fn sha_json<T: Serialize>(v: &T) -> String {
    crate::rng::sha256_hex(&serde_json::to_vec(v).expect("serializable"))
}

struct Prepared {
    features: Array2<f64>,
    y: Vec<usize>,
    data_hash: String,
}

/// Orders training rows canonically (slice key, label, feature values) so
/// fitted parameters do not depend on the input order.
fn prepare(featurizer: &Featurizer, view: View, samples: &[SliceSample]) -> Result<Prepared> {
    if samples.is_empty() {
        return Err(QcError::SingleClass("no training samples".into()));
    }
    check_views(Some(view), samples)?;
    let y: Vec<usize> = samples
        .iter()
        .map(|s| {
            s.label
                .map(|l| l.index())
                .ok_or_else(|| QcError::Labels(format!("training slice {} has no label", s.key)))
        })
        .collect::<Result<_>>()?;
    let x = featurizer.matrix(samples)?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| {
        samples[a]
            .key
            .cmp(&samples[b].key)
            .then(y[a].cmp(&y[b]))
            .then_with(|| {
                x.row(a)
                    .iter()
                    .zip(x.row(b).iter())
                    .map(|(p, q)| p.total_cmp(q))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
    });
    let mut h = Sha256::new();
    for &i in &order {
        let s = &samples[i];
        h.update(s.key.to_string().as_bytes());
        h.update([y[i] as u8]);
        for v in s.pixels.iter() {
            h.update(v.to_le_bytes());
        }
    }
    Ok(Prepared {
        features: x.select(Axis(0), &order),
        y: order.iter().map(|&i| y[i]).collect(),
        data_hash: hex::encode(h.finalize()),
    })
}

fn fit_params(
    spec: &BackendSpec,
    data: &Prepared,
    warm: Option<&ModelParams>,
) -> Result<(ModelParams, TrainingSummary)> {
    let x = data.features.view();
    let y = &data.y;
    match spec {
        BackendSpec::CnnHead { head, train } | BackendSpec::GaborFc { head, train, .. } => {
            let warm = match warm {
                Some(ModelParams::Head(m)) => Some(m),
                _ => None,
            };
            log::info!(
                "training {} head: epochs={} lr={} batch={}",
                spec.backend(),
                train.epochs,
                train.learning_rate,
                train.batch_size
            );
            let (mlp, log) = train_head(x, y, head, train, warm)?;
            Ok((
                ModelParams::Head(mlp),
                TrainingSummary {
                    epoch_losses: log.epoch_losses,
                    train_accuracy: Some(log.train_accuracy),
                    ..Default::default()
                },
            ))
        }
        BackendSpec::GaborRf { rf, .. } | BackendSpec::ZernikeRf { rf, .. } | BackendSpec::LbpRf { rf, .. } => {
            let forest = RandomForest::fit(x, y, rf)?;
            let summary = TrainingSummary {
                oob_accuracy: forest.oob_accuracy,
                ..Default::default()
            };
            Ok((ModelParams::Forest(forest), summary))
        }
        BackendSpec::CnnPcaSvm { pca, svm } => {
            head::check_classes(y, 2)?;
            let p = Pca::fit(x, pca)?;
            let k = p.n_components();
            let explained = p.explained_ratio(k);
            if explained < pca.variance_target {
                return Err(QcError::Invariant(format!("PCA kept {k} components explaining only {explained}")));
            }
            let s = Svm::fit(p.transform(x)?.view(), y, svm)?;
            Ok((
                ModelParams::PcaSvm(p, s),
                TrainingSummary {
                    pca_components: Some(k),
                    explained_variance: Some(explained),
                    ..Default::default()
                },
            ))
        }
    }
}

/// Trains a detector for `view` on labelled slices.
pub fn train_detector(
    spec: &BackendSpec,
    view: View,
    samples: &[SliceSample],
    backbone: Option<&Backbone>,
) -> Result<DetectorModel> {
    spec.validate()?;
    let featurizer = Featurizer::new(spec, backbone)?;
    let data = prepare(&featurizer, view, samples)?;
    let (params, summary) = fit_params(spec, &data, None)?;
    Ok(DetectorModel::assemble(spec, view, featurizer, params, summary, &data))
}

impl DetectorModel {
    fn assemble(
        spec: &BackendSpec,
        view: View,
        featurizer: Featurizer,
        params: ModelParams,
        summary: TrainingSummary,
        data: &Prepared,
    ) -> Self {
        let backbone_digest = featurizer.backbone().map(|b| b.digest().to_string());
        DetectorModel {
            backend: spec.backend(),
            view,
            artifacts_covered: BTreeSet::new(),
            spec: spec.clone(),
            fingerprint: TrainingFingerprint {
                config_hash: sha_json(spec),
                data_hash: data.data_hash.clone(),
                seed: spec.seed(),
                samples: data.y.len(),
                pooling: backbone_digest.as_ref().map(|_| "global_average".to_string()),
                backbone_digest,
            },
            summary,
            params,
            featurizer,
        }
    }

    pub fn backbone(&self) -> Option<&Backbone> {
        self.featurizer.backbone()
    }

    pub fn with_artifacts(mut self, kinds: impl IntoIterator<Item = ArtifactKind>) -> Self {
        self.artifacts_covered = kinds.into_iter().collect();
        self
    }

    /// Probabilities for precomputed feature rows.
    pub fn predict_features(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        let p = match &self.params {
            ModelParams::Head(m) => m.predict_proba(x.view())?,
            ModelParams::Forest(f) => f.predict_proba(x.view())?,
            ModelParams::PcaSvm(p, s) => s.predict_proba(p.transform(x.view())?.view())?,
        };
        Ok(p.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }

    pub fn pca(&self) -> Option<&Pca> {
        match &self.params {
            ModelParams::PcaSvm(p, _) => Some(p),
            _ => None,
        }
    }

    /// Writes the model container: magic, u32 LE header length, JSON header,
    /// bincode parameter blob.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = json!({
            "format": "dwiqc-detector",
            "version": MODEL_FORMAT_VERSION,
            "backend": self.backend,
            "view": self.view,
            "artifacts_covered": self.artifacts_covered,
            "spec": self.spec,
            "fingerprint": self.fingerprint,
            "summary": self.summary,
        });
        let header = serde_json::to_vec(&header)?;
        let blob = bincode::serialize(&ParamBlob {
            backbone: self.featurizer.backbone().cloned(),
            params: self.params.clone(),
        })
        .map_err(|e| QcError::ModelFormat(e.to_string()))?;
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
            f.write_all(MODEL_MAGIC)?;
            f.write_all(&(header.len() as u32).to_le_bytes())?;
            f.write_all(&header)?;
            f.write_all(&blob)?;
            f.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| QcError::Load {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let bad = |m: &str| QcError::ModelFormat(format!("{}: {m}", path.display()));
        if bytes.len() < 12 || &bytes[..8] != MODEL_MAGIC {
            return Err(bad("not a detector model file"));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let header_bytes = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
        #[derive(Deserialize)]
        struct Header {
            format: String,
            version: u32,
            backend: Backend,
            view: View,
            artifacts_covered: BTreeSet<ArtifactKind>,
            spec: BackendSpec,
            fingerprint: TrainingFingerprint,
            summary: TrainingSummary,
        }
        let h: Header = serde_json::from_slice(header_bytes)?;
        if h.format != "dwiqc-detector" {
            return Err(bad("unknown container format"));
        }
        if h.version != MODEL_FORMAT_VERSION {
            return Err(bad(&format!(
                "format version {} is not supported (expected {MODEL_FORMAT_VERSION})",
                h.version
            )));
        }
        if h.spec.backend() != h.backend {
            return Err(bad("header backend disagrees with its spec"));
        }
        let blob: ParamBlob =
            bincode::deserialize(&bytes[12 + hlen..]).map_err(|e| bad(&format!("parameter blob: {e}")))?;
        let digest = blob.backbone.as_ref().map(|b| b.digest().to_string());
        if digest != h.fingerprint.backbone_digest {
            return Err(QcError::DigestMismatch {
                expected: h.fingerprint.backbone_digest.unwrap_or_else(|| "none".into()),
                actual: digest.unwrap_or_else(|| "none".into()),
            });
        }
        let featurizer = Featurizer::new(&h.spec, blob.backbone.as_ref())?;
        Ok(DetectorModel {
            backend: h.backend,
            view: h.view,
            artifacts_covered: h.artifacts_covered,
            spec: h.spec,
            fingerprint: h.fingerprint,
            summary: h.summary,
            params: blob.params,
            featurizer,
        })
    }

    /// Loads a model and requires its backend and, when given, its view.
    pub fn load_as(path: &Path, backend: Backend, view: Option<View>) -> Result<Self> {
        let m = Self::load(path)?;
        if m.backend != backend {
            return Err(QcError::ModelFormat(format!(
                "{} holds a {} model, expected {backend}",
                path.display(),
                m.backend
            )));
        }
        if let Some(v) = view {
            if m.view != v {
                return Err(QcError::ViewMismatch {
                    expected: v.to_string(),
                    actual: m.view.to_string(),
                });
            }
        }
        Ok(m)
    }
}

impl SliceClassifier for DetectorModel {
    fn view(&self) -> Option<View> {
        Some(self.view)
    }

    fn describe(&self) -> serde_json::Value {
        json!({
            "backend": self.backend,
            "view": self.view,
            "fingerprint": self.fingerprint,
        })
    }

    fn predict_proba(&self, samples: &[SliceSample]) -> Result<Vec<f64>> {
        check_views(Some(self.view), samples)?;
        let x = self.featurizer.matrix(samples)?;
        self.predict_features(&x)
    }
}

pub fn save_model(model: &DetectorModel, path: &Path) -> Result<()> {
    model.save(path)
}

pub fn load_model(path: &Path) -> Result<DetectorModel> {
    DetectorModel::load(path)
}

/// Class-stratified random subset of `round(fraction * n)` samples. Each
/// class gets its proportional share, remainders going to the largest
/// fractional parts. Returns indices into `samples`, sorted.
pub fn stratified_sample(samples: &[SliceSample], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(QcError::Config(format!("fraction {fraction} outside (0, 1]")));
    }
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, s) in samples.iter().enumerate() {
        let l = s
            .label
            .ok_or_else(|| QcError::Labels(format!("slice {} has no label", s.key)))?;
        by_class[l.index()].push(i);
    }
    let total = (fraction * samples.len() as f64).round() as usize;
    if total == 0 {
        return Err(QcError::invalid(format!(
            "fraction {fraction} of {} samples selects nothing",
            samples.len()
        )));
    }
    let quotas: Vec<f64> = by_class.iter().map(|c| fraction * c.len() as f64).collect();
    let mut take: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut rest: Vec<usize> = (0..2).collect();
    rest.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
    let mut missing = total.saturating_sub(take.iter().sum());
    for &c in rest.iter().cycle().take(4) {
        if missing == 0 {
            break;
        }
        if take[c] < by_class[c].len() {
            take[c] += 1;
            missing -= 1;
        }
    }
    let mut rng = stream(seed, "finetune-sample");
    let mut out = Vec::with_capacity(total);
    for (c, members) in by_class.iter_mut().enumerate() {
        members.shuffle(&mut rng);
        out.extend_from_slice(&members[..take[c]]);
    }
    out.sort_unstable();
    Ok(out)
}

/// Retrains on `base` plus a stratified `fraction` of `new`. Heads continue
/// from their current weights; forests and SVMs are refitted. Returns the
/// model and the keys of the new samples used, which must be kept out of any
/// evaluation.
pub fn finetune(
    model: &DetectorModel,
    base: &[SliceSample],
    new: &[SliceSample],
    fraction: f64,
    seed: u64,
) -> Result<(DetectorModel, Vec<SliceKey>)> {
    let picked = stratified_sample(new, fraction, seed)?;
    let mut union: Vec<SliceSample> = base.to_vec();
    union.extend(picked.iter().map(|&i| new[i].clone()));
    let featurizer = Featurizer::new(&model.spec, model.backbone())?;
    let data = prepare(&featurizer, model.view, &union)?;
    let (params, summary) = fit_params(&model.spec, &data, Some(&model.params))?;
    let tuned = DetectorModel::assemble(&model.spec, model.view, featurizer, params, summary, &data)
        .with_artifacts(model.artifacts_covered.iter().copied());
    Ok((tuned, picked.iter().map(|&i| new[i].key.clone()).collect()))
}
