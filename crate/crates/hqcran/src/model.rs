//! Network and dataset representation: JSON network files, CSV / IDX sample
//! ingestion, random instance generation and plain forward inference.

use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mat::Mat;
use crate::{Error, Result};

/// One fully connected layer: `weights` is n_out × n_in, row-major per
/// output neuron, so the pre-activation is `weights · z + bias`.
#[derive(Clone, Debug)]
pub struct Layer {
    pub weights: Mat,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }
}

/// A feed-forward ReLU network. When `final_relu` is set the last affine
/// layer is followed by a ReLU as well, so all logits are non-negative.
#[derive(Clone, Debug)]
pub struct Network {
    pub name: String,
    pub layers: Vec<Layer>,
    pub final_relu: bool,
}

impl Network {
    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Layer widths (n_0, n_1, …, n_L).
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(Layer::out_dim));
        d
    }

    /// Checks the dimension chain and entry finiteness. Layer indices in
    /// errors are 1-based.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument("network has no layers".into()));
        }
        let mut prev = self.layers[0].in_dim();
        for (i, layer) in self.layers.iter().enumerate() {
            let idx = i + 1;
            if layer.out_dim() == 0 || layer.in_dim() == 0 {
                return Err(Error::DimensionMismatch {
                    layer: idx,
                    detail: "empty layer".into(),
                });
            }
            if layer.in_dim() != prev {
                return Err(Error::DimensionMismatch {
                    layer: idx,
                    detail: format!(
                        "weights have {} columns but previous layer has {} outputs",
                        layer.in_dim(),
                        prev
                    ),
                });
            }
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::DimensionMismatch {
                    layer: idx,
                    detail: format!(
                        "bias length {} does not match {} output rows",
                        layer.bias.len(),
                        layer.out_dim()
                    ),
                });
            }
            if !layer.weights.is_finite() {
                return Err(Error::NonFinite {
                    layer: idx,
                    which: "weights",
                });
            }
            if !layer.bias.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite {
                    layer: idx,
                    which: "bias",
                });
            }
            prev = layer.out_dim();
        }
        Ok(())
    }

    /// Forward pass returning the logits and the predicted class
    /// (argmax, lowest index on ties).
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, usize)> {
        let pre = self.forward_preactivations(x)?;
        let last = pre.last().unwrap();
        let logits: Vec<f64> = if self.final_relu {
            last.iter().map(|v| v.max(0.0)).collect()
        } else {
            last.clone()
        };
        Ok((logits.clone(), argmax(&logits)))
    }

    /// Pre-activation vectors ẑ per layer; the inputs to each ReLU.
    pub fn forward_preactivations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                layer: 0,
                detail: format!("input length {} vs n_0 {}", x.len(), self.input_dim()),
            });
        }
        let mut acts = x.to_vec();
        let mut pre = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.weights.matvec(&acts);
            for (zj, bj) in z.iter_mut().zip(&layer.bias) {
                *zj += bj;
            }
            pre.push(z.clone());
            let relu = i + 1 < self.layers.len() || self.final_relu;
            acts = if relu {
                z.into_iter().map(|v| v.max(0.0)).collect()
            } else {
                z
            };
        }
        Ok(pre)
    }
}

/// Argmax with lowest-index tie-break.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// A labelled input point.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

/// l-infinity ball around a center point.
#[derive(Clone, Debug)]
pub struct Ball {
    pub center: Vec<f64>,
    pub epsilon: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, epsilon: f64) -> Result<Self> {
        if epsilon.is_nan() || epsilon < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be >= 0, got {epsilon}"
            )));
        }
        Ok(Ball { center, epsilon })
    }
}

// ---------------------------------------------------------------------------
// Network files
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct LayerFile {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    name: String,
    final_relu: bool,
    layers: Vec<LayerFile>,
}

/// Loads a network from the JSON schema
/// `{"name", "final_relu", "layers": [{"weights": [[..]], "bias": [..]}]}`.
pub fn load_network(path: &Path) -> Result<Network> {
    let text = std::fs::read_to_string(path)?;
    let file: NetworkFile = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let mut layers = Vec::with_capacity(file.layers.len());
    for (i, lf) in file.layers.into_iter().enumerate() {
        let rows = lf.weights.len();
        let cols = lf.weights.first().map_or(0, Vec::len);
        if lf.weights.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch {
                layer: i + 1,
                detail: "ragged weight rows".into(),
            });
        }
        if rows == 0 || cols == 0 {
            return Err(Error::DimensionMismatch {
                layer: i + 1,
                detail: "empty layer".into(),
            });
        }
        layers.push(Layer {
            weights: Mat::from_rows(lf.weights),
            bias: lf.bias,
        });
    }
    let net = Network {
        name: file.name,
        layers,
        final_relu: file.final_relu,
    };
    net.validate()?;
    Ok(net)
}

/// Writes a network back to the JSON schema read by [`load_network`].
pub fn save_network(net: &Network, path: &Path) -> Result<()> {
    let file = NetworkFile {
        name: net.name.clone(),
        final_relu: net.final_relu,
        layers: net
            .layers
            .iter()
            .map(|l| LayerFile {
                weights: (0..l.out_dim())
                    .map(|r| l.weights.row(r).to_vec())
                    .collect(),
                bias: l.bias.clone(),
            })
            .collect(),
    };
    let text =
        serde_json::to_string_pretty(&file).map_err(|e| Error::Parse(format!("serialize: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Random network with weights and biases uniform in
/// [-weight_scale, weight_scale]. Deterministic for a fixed seed.
pub fn generate_random_network(dims: &[usize], weight_scale: f64, seed: u64) -> Result<Network> {
    if dims.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least input and output dims, got {dims:?}"
        )));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidArgument("zero-width layer".into()));
    }
    if weight_scale.is_nan() || weight_scale <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "weight_scale must be > 0, got {weight_scale}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(-weight_scale, weight_scale);
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for w in dims.windows(2) {
        let (n_in, n_out) = (w[0], w[1]);
        let rows: Vec<Vec<f64>> = (0..n_out)
            .map(|_| (0..n_in).map(|_| dist.sample(&mut rng)).collect())
            .collect();
        let bias: Vec<f64> = (0..n_out).map(|_| dist.sample(&mut rng)).collect();
        layers.push(Layer {
            weights: Mat::from_rows(rows),
            bias,
        });
    }
    let name = format!(
        "gen-{}-s{seed}",
        dims.iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x")
    );
    Ok(Network {
        name,
        layers,
        final_relu: true,
    })
}

// ---------------------------------------------------------------------------
// Samples
// ---------------------------------------------------------------------------

/// Where to read samples from.
#[derive(Clone, Debug)]
pub enum SampleSource {
    /// CSV rows `label,feature,…`; a non-numeric first cell marks a header.
    Csv(std::path::PathBuf),
    /// Uncompressed IDX pair (big-endian, magics 0x803 images / 0x801 labels).
    Idx {
        images: std::path::PathBuf,
        labels: std::path::PathBuf,
    },
}

/// Loads samples, preserving file order. IDX pixel bytes are scaled to
/// [0, 1] by dividing by 255; CSV features are taken verbatim.
pub fn load_samples(source: &SampleSource) -> Result<Vec<Sample>> {
    match source {
        SampleSource::Csv(path) => load_samples_csv(path),
        SampleSource::Idx { images, labels } => load_samples_idx(images, labels),
    }
}

fn load_samples_csv(path: &Path) -> Result<Vec<Sample>> {
    let text = std::fs::read_to_string(path)?;
    let mut samples = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if lineno == 0 && cells[0].parse::<f64>().is_err() {
            continue; // header
        }
        match width {
            None => width = Some(cells.len()),
            Some(w) if w != cells.len() => {
                return Err(Error::Parse(format!(
                    "{}: row {} has {} columns, expected {w}",
                    path.display(),
                    lineno + 1,
                    cells.len()
                )))
            }
            _ => {}
        }
        if cells.len() < 2 {
            return Err(Error::Parse(format!(
                "{}: row {} needs a label and at least one feature",
                path.display(),
                lineno + 1
            )));
        }
        let raw: f64 = cells[0].parse().map_err(|_| {
            Error::Parse(format!(
                "{}: row {}: bad label {:?}",
                path.display(),
                lineno + 1,
                cells[0]
            ))
        })?;
        if raw < 0.0 || raw.fract() != 0.0 {
            return Err(Error::Parse(format!(
                "{}: row {}: label must be a non-negative integer, got {raw}",
                path.display(),
                lineno + 1
            )));
        }
        let mut features = Vec::with_capacity(cells.len() - 1);
        for (col, cell) in cells[1..].iter().enumerate() {
            features.push(cell.parse::<f64>().map_err(|_| {
                Error::Parse(format!(
                    "{}: row {} column {}: bad number {cell:?}",
                    path.display(),
                    lineno + 1,
                    col + 2
                ))
            })?);
        }
        samples.push(Sample {
            features,
            label: raw as usize,
        });
    }
    Ok(samples)
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], pos: usize, what: &str) -> Result<u32> {
    let end = pos + 4;
    if end > bytes.len() {
        return Err(Error::Parse(format!("{what}: truncated IDX header")));
    }
    Ok(u32::from_be_bytes(bytes[pos..end].try_into().unwrap()))
}

fn load_samples_idx(images: &Path, labels: &Path) -> Result<Vec<Sample>> {
    let img = std::fs::read(images)?;
    let lab = std::fs::read(labels)?;

    let magic = be_u32(&img, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Parse(format!(
            "{}: bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}",
            images.display()
        )));
    }
    let count = be_u32(&img, 4, "images")? as usize;
    let rows = be_u32(&img, 8, "images")? as usize;
    let cols = be_u32(&img, 12, "images")? as usize;
    let pixels = rows * cols;
    if img.len() != 16 + count * pixels {
        return Err(Error::Parse(format!(
            "{}: expected {} data bytes, found {}",
            images.display(),
            count * pixels,
            img.len().saturating_sub(16)
        )));
    }

    let magic = be_u32(&lab, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Parse(format!(
            "{}: bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}",
            labels.display()
        )));
    }
    let lcount = be_u32(&lab, 4, "labels")? as usize;
    if lcount != count {
        return Err(Error::Parse(format!(
            "label count {lcount} does not match image count {count}"
        )));
    }
    if lab.len() != 8 + lcount {
        return Err(Error::Parse(format!(
            "{}: truncated label data",
            labels.display()
        )));
    }

    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let start = 16 + i * pixels;
        let features = img[start..start + pixels]
            .iter()
            .map(|&b| f64::from(b) / 255.0)
            .collect();
        samples.push(Sample {
            features,
            label: lab[8 + i] as usize,
        });
    }
    Ok(samples)
}
