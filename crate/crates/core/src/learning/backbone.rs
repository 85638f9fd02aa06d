//! Frozen convolutional feature extractor loaded from a safetensors asset.
//!
//! The network is a small VGG-style stack of 3x3 convolutions with ReLU and
//! 2x2 max pooling, followed by global average pooling.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand_distr::{Distribution, Normal};
use safetensors::{Dtype, SafeTensors};
use serde::{Deserialize, Serialize};

use crate::error::{QcError, Result};
use crate::rng::{sha256_hex, stream};
use crate::volume::{normalize_pixels, prepare_input};

pub const DEFAULT_CHANNELS: [usize; 4] = [16, 32, 64, 128];
pub const DEFAULT_INPUT: usize = 64;

/// Declared backbone asset; the digest is the SHA-256 of the file bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureBackbone {
    pub name: String,
    pub weights_path: PathBuf,
    pub output_dim: usize,
    pub input_shape: (usize, usize, usize),
    #[serde(default = "yes")]
    pub frozen: bool,
    pub weights_digest: String,
}

fn yes() -> bool {
    true
}

#[derive(Serialize, Deserialize)]
struct AssetInfo {
    name: String,
    input_size: usize,
    depth: usize,
    seed: u64,
}

#[derive(Debug, Clone)]
struct ConvLayer {
    c_in: usize,
    c_out: usize,
    /// `[c_out][c_in][3][3]`
    weight: Vec<f32>,
    bias: Vec<f32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BackboneBlob {
    bytes: Vec<u8>,
}

/// A loaded backbone. Serializes as its original asset bytes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(into = "BackboneBlob", try_from = "BackboneBlob")]
pub struct Backbone {
    name: String,
    input: usize,
    layers: Vec<ConvLayer>,
    bytes: Vec<u8>,
    digest: String,
}

impl From<Backbone> for BackboneBlob {
    fn from(b: Backbone) -> Self {
        BackboneBlob { bytes: b.bytes }
    }
}

impl TryFrom<BackboneBlob> for Backbone {
    type Error = QcError;

    fn try_from(blob: BackboneBlob) -> Result<Self> {
        Backbone::from_bytes(blob.bytes)
    }
}

fn fmt_err(e: impl std::fmt::Display) -> QcError {
    QcError::ModelFormat(format!("backbone asset: {e}"))
}

impl Backbone {
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self> {
        let (_, meta) = SafeTensors::read_metadata(&bytes).map_err(fmt_err)?;
        let config = meta
            .metadata()
            .as_ref()
            .and_then(|m| m.get("config"))
            .ok_or_else(|| fmt_err("missing 'config' metadata"))?;
        let info: AssetInfo = serde_json::from_str(config).map_err(fmt_err)?;
        let (name, input, depth) = (info.name, info.input_size, info.depth);
        let tensors = SafeTensors::deserialize(&bytes).map_err(fmt_err)?;
        let read = |key: &str| -> Result<(Vec<usize>, Vec<f32>)> {
            let t = tensors.tensor(key).map_err(fmt_err)?;
            if t.dtype() != Dtype::F32 {
                return Err(fmt_err(format!("{key} is {:?}, expected F32", t.dtype())));
            }
            let values = t
                .data()
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            Ok((t.shape().to_vec(), values))
        };
        let mut layers = Vec::with_capacity(depth);
        let mut c_prev = 3;
        for i in 0..depth {
            let (ws, weight) = read(&format!("conv{i}.weight"))?;
            let (bs, bias) = read(&format!("conv{i}.bias"))?;
            if ws.len() != 4 || ws[1] != c_prev || ws[2] != 3 || ws[3] != 3 || bs != [ws[0]] {
                return Err(fmt_err(format!("conv{i} has shape {ws:?} / {bs:?}")));
            }
            layers.push(ConvLayer {
                c_in: ws[1],
                c_out: ws[0],
                weight,
                bias,
            });
            c_prev = ws[0];
        }
        if layers.is_empty() || input >> depth == 0 {
            return Err(fmt_err("backbone needs at least one layer and a large enough input"));
        }
        Ok(Backbone {
            name,
            input,
            layers,
            digest: sha256_hex(&bytes),
            bytes,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.c_out).unwrap_or(0)
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        (self.input, self.input, 3)
    }

    /// Pooled features of one slice. The slice is normalised, resized to the
    /// input size and replicated to three channels.
    pub fn features(&self, pixels: &Array2<f64>) -> Result<Vec<f64>> {
        let img = prepare_input(&normalize_pixels(pixels), (self.input, self.input))?;
        let plane: Vec<f32> = img.iter().map(|&v| v as f32).collect();
        let mut x = [plane.as_slice(); 3].concat();
        let (mut h, mut w) = (self.input, self.input);
        for layer in &self.layers {
            x = conv3x3_relu(&x, layer, h, w);
            (x, h, w) = max_pool2(&x, layer.c_out, h, w);
        }
        let n = (h * w) as f64;
        Ok(x.chunks_exact(h * w)
            .map(|c| c.iter().map(|&v| v as f64).sum::<f64>() / n)
            .collect())
    }
}

fn conv3x3_relu(input: &[f32], layer: &ConvLayer, h: usize, w: usize) -> Vec<f32> {
    let plane = h * w;
    let mut out = vec![0f32; layer.c_out * plane];
    for (o, dst) in out.chunks_exact_mut(plane).enumerate() {
        dst.fill(layer.bias[o]);
        for i in 0..layer.c_in {
            let src = &input[i * plane..(i + 1) * plane];
            let k = &layer.weight[(o * layer.c_in + i) * 9..(o * layer.c_in + i + 1) * 9];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = k[ky * 3 + kx];
                    let x0 = 1usize.saturating_sub(kx);
                    let x1 = (w + 1 - kx).min(w);
                    for y in 0..h {
                        let sy = y + ky;
                        if sy < 1 || sy > h {
                            continue;
                        }
                        let srow = &src[(sy - 1) * w..sy * w];
                        let drow = &mut dst[y * w..(y + 1) * w];
                        for x in x0..x1 {
                            drow[x] += wv * srow[x + kx - 1];
                        }
                    }
                }
            }
        }
        dst.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    out
}

fn max_pool2(input: &[f32], c: usize, h: usize, w: usize) -> (Vec<f32>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in input.chunks_exact(h * w) {
        for y in 0..oh {
            for x in 0..ow {
                let a = ch[2 * y * w + 2 * x];
                let b = ch[2 * y * w + 2 * x + 1];
                let cc = ch[(2 * y + 1) * w + 2 * x];
                let d = ch[(2 * y + 1) * w + 2 * x + 1];
                out.push(a.max(b).max(cc).max(d));
            }
        }
    }
    (out, oh, ow)
}

/// Fixed first-layer filters: smoothing, oriented first and second
/// derivatives of both polarities, Laplacians and a checkerboard.
fn stem_filters() -> Vec<[f32; 9]> {
    let sobel = [
        [-1., 0., 1., -2., 0., 2., -1., 0., 1.],
        [0., 1., 2., -1., 0., 1., -2., -1., 0.],
        [-1., -2., -1., 0., 0., 0., 1., 2., 1.],
        [-2., -1., 0., -1., 0., 1., 0., 1., 2.],
    ];
    let line = [
        [-1., 2., -1., -1., 2., -1., -1., 2., -1.],
        [-1., -1., 2., -1., 2., -1., 2., -1., -1.],
        [-1., -1., -1., 2., 2., 2., -1., -1., -1.],
        [2., -1., -1., -1., 2., -1., -1., -1., 2.],
    ];
    let mut out = vec![[1.0 / 9.0; 9]];
    for s in sobel {
        out.push(s.map(|v| v / 4.0));
        out.push(s.map(|v| -v / 4.0));
    }
    for l in line {
        out.push(l.map(|v| v / 6.0));
    }
    out.push([0., 1., 0., 1., -4., 1., 0., 1., 0.].map(|v| v / 4.0));
    out.push([-1., 1., -1., 1., -1., 1., -1., 1., -1.].map(|v| v / 9.0));
    out.push([1., -1., 1., -1., 1., -1., 1., -1., 1.].map(|v| v / 9.0));
    out
}

fn tensor_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Builds the default backbone asset deterministically from `seed` and writes
/// it to `path`.
pub fn make_backbone_asset(path: &Path, seed: u64) -> Result<FeatureBackbone> {
    let channels = DEFAULT_CHANNELS;
    let mut tensors: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
    let mut c_in = 3;
    for (i, &c_out) in channels.iter().enumerate() {
        let mut weight = Vec::with_capacity(c_out * c_in * 9);
        if i == 0 {
            let stem = stem_filters();
            debug_assert_eq!(stem.len(), c_out);
            for f in &stem {
                for _ in 0..c_in {
                    weight.extend(f.iter().map(|v| v / c_in as f32));
                }
            }
        } else {
            // the first c_in outputs copy their input channel; the rest are random
            let mut rng = stream(seed, &format!("conv{i}"));
            let normal = Normal::new(0.0, (2.0 / (9.0 * c_in as f64)).sqrt()).expect("valid sigma");
            for o in 0..c_out {
                for j in 0..c_in {
                    if o < c_in {
                        weight.extend((0..9).map(|t| if j == o && t == 4 { 1.0 } else { 0.0 }));
                    } else {
                        weight.extend((0..9).map(|_| normal.sample(&mut rng) as f32));
                    }
                }
            }
        }
        tensors.push((format!("conv{i}.weight"), vec![c_out, c_in, 3, 3], tensor_bytes(&weight)));
        tensors.push((format!("conv{i}.bias"), vec![c_out], tensor_bytes(&vec![0.0; c_out])));
        c_in = c_out;
    }
    let views = tensors
        .iter()
        .map(|(name, shape, data)| {
            safetensors::tensor::TensorView::new(Dtype::F32, shape.clone(), data)
                .map(|v| (name.clone(), v))
                .map_err(fmt_err)
        })
        .collect::<Result<Vec<_>>>()?;
    let name = "vgg-mini".to_string();
    // a single metadata entry keeps the header byte-stable
    let info = AssetInfo {
        name: name.clone(),
        input_size: DEFAULT_INPUT,
        depth: channels.len(),
        seed,
    };
    let info = HashMap::from([("config".to_string(), serde_json::to_string(&info)?)]);
    let bytes = safetensors::serialize(views, Some(info)).map_err(fmt_err)?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, &bytes)?;
    Ok(FeatureBackbone {
        name,
        weights_path: path.to_path_buf(),
        output_dim: channels[channels.len() - 1],
        input_shape: (DEFAULT_INPUT, DEFAULT_INPUT, 3),
        frozen: true,
        weights_digest: sha256_hex(&bytes),
    })
}

/// Loads and verifies a declared backbone asset.
pub fn load_backbone(spec: &FeatureBackbone) -> Result<Backbone> {
    let bytes = std::fs::read(&spec.weights_path).map_err(|e| QcError::Load {
        path: spec.weights_path.clone(),
        reason: e.to_string(),
    })?;
    let actual = sha256_hex(&bytes);
    if actual != spec.weights_digest {
        return Err(QcError::DigestMismatch {
            expected: spec.weights_digest.clone(),
            actual,
        });
    }
    let backbone = Backbone::from_bytes(bytes)?;
    if backbone.output_dim() != spec.output_dim || backbone.input_shape() != spec.input_shape {
        return Err(QcError::ModelFormat(format!(
            "backbone declares dim {} / input {:?}, asset has {} / {:?}",
            spec.output_dim,
            spec.input_shape,
            backbone.output_dim(),
            backbone.input_shape()
        )));
    }
    if !spec.frozen {
        return Err(QcError::Config("backbones are always frozen".into()));
    }
    Ok(backbone)
}
