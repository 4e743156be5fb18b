use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{l2_norm, Tensor};
use crate::rng;

/// Labelled feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let (rows, _) = match features.shape() {
            [r, c] => (*r, *c),
            s => {
                return Err(Error::Dimension(format!(
                    "features must be [n, D], got {s:?}"
                )))
            }
        };
        if rows != labels.len() {
            return Err(Error::Dimension(format!(
                "{rows} rows but {} labels",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Index {
                index: bad,
                len: num_classes,
            });
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn input(&self, i: usize) -> Tensor {
        Tensor::vector(self.features.row(i).to_vec())
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut data = Vec::with_capacity(indices.len() * self.dim());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Index {
                    index: i,
                    len: self.len(),
                });
            }
            data.extend_from_slice(self.features.row(i));
            labels.push(self.labels[i]);
        }
        Self::new(
            Tensor::matrix(indices.len(), self.dim(), data)?,
            labels,
            self.num_classes,
        )
    }

    /// Rows whose label passes `keep`, with labels remapped by `relabel`.
    pub fn select(
        &self,
        keep: impl Fn(usize) -> bool,
        relabel: impl Fn(usize) -> usize,
        num_classes: usize,
    ) -> Result<Self> {
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (i, &l) in self.labels.iter().enumerate() {
            if keep(l) {
                data.extend_from_slice(self.features.row(i));
                labels.push(relabel(l));
            }
        }
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Self::new(
            Tensor::matrix(labels.len(), self.dim(), data)?,
            labels,
            num_classes,
        )
    }
}

/// Gaussian-blob generator.
///
/// Class means are `0.5 + spread · A z_k` where `A` is an orthonormal
/// `D × latent_dim` basis shared by every class and `z_k ~ N(0, I)`. Samples add
/// `latent_noise` along the shared basis and `noise` isotropically, then clip
/// to `[0, 1]`. With `latent_dim == dim` the basis is the whole space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub dim: usize,
    pub classes: usize,
    pub samples_per_class: usize,
    #[serde(default)]
    pub latent_dim: Option<usize>,
    #[serde(default = "default_spread")]
    pub spread: f64,
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default)]
    pub latent_noise: f64,
    pub seed: u64,
}

fn default_spread() -> f64 {
    0.15
}

fn default_noise() -> f64 {
    0.05
}

impl BlobSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 || self.classes < 2 {
            return Err(Error::InvalidInput(format!(
                "need dim >= 2 and classes >= 2, got dim={} classes={}",
                self.dim, self.classes
            )));
        }
        if self.samples_per_class < 5 {
            return Err(Error::InvalidInput(
                "need at least 5 samples per class for an 80/20 split".into(),
            ));
        }
        let latent = self.latent_dim.unwrap_or(self.dim);
        if latent == 0 || latent > self.dim {
            return Err(Error::InvalidInput(format!(
                "latent_dim {latent} must be in 1..={}",
                self.dim
            )));
        }
        if !(self.spread > 0.0) || self.noise < 0.0 || self.latent_noise < 0.0 {
            return Err(Error::InvalidInput(
                "spread must be positive, noise non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Train/test pair produced by [`generate_blobs`].
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
}

fn orthonormal_basis(dim: usize, k: usize, rng: &mut rng::Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= p * bi;
            }
        }
        let n = l2_norm(&v);
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
    basis
}

/// Seeded blobs split 80/20 per class.
pub fn generate_blobs(spec: &BlobSpec) -> Result<Split> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.seed);
    let dim = spec.dim;
    let latent = spec.latent_dim.unwrap_or(dim);
    let basis = orthonormal_basis(dim, latent, &mut rng);
    let embed = |z: &[f64], scale: f64, out: &mut [f64]| {
        for (zj, b) in z.iter().zip(&basis) {
            for (o, bi) in out.iter_mut().zip(b) {
                *o += scale * zj * bi;
            }
        }
    };

    let mut train = (Vec::new(), Vec::new());
    let mut test = (Vec::new(), Vec::new());
    let n_test = (spec.samples_per_class as f64 * 0.2).round() as usize;
    for class in 0..spec.classes {
        let z: Vec<f64> = (0..latent)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let mut mean = vec![0.5; dim];
        embed(&z, spec.spread, &mut mean);
        let mut rows: Vec<Vec<f64>> = (0..spec.samples_per_class)
            .map(|_| {
                let mut x = mean.clone();
                if spec.latent_noise > 0.0 {
                    let e: Vec<f64> = (0..latent)
                        .map(|_| StandardNormal.sample(&mut rng))
                        .collect();
                    embed(&e, spec.latent_noise, &mut x);
                }
                for xi in x.iter_mut() {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    *xi = (*xi + spec.noise * e).clamp(0.0, 1.0);
                }
                x
            })
            .collect();
        rows.shuffle(&mut rng);
        for (i, row) in rows.into_iter().enumerate() {
            let target = if i < n_test { &mut test } else { &mut train };
            target.0.extend(row);
            target.1.push(class);
        }
    }
    let build = |(data, labels): (Vec<f64>, Vec<usize>)| -> Result<Dataset> {
        let n = labels.len();
        Dataset::new(Tensor::matrix(n, dim, data)?, labels, spec.classes)
    };
    Ok(Split {
        train: build(train)?,
        test: build(test)?,
    })
}

pub const DATASET_FORMAT: &str = "ods-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct PartFile {
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    format: String,
    version: u32,
    dim: usize,
    num_classes: usize,
    metadata: BTreeMap<String, serde_json::Value>,
    train: PartFile,
    test: PartFile,
}

fn to_part(d: &Dataset) -> PartFile {
    PartFile {
        features: d.features.rows().map(|r| r.to_vec()).collect(),
        labels: d.labels.clone(),
    }
}

fn from_part(p: PartFile, dim: usize, classes: usize) -> Result<Dataset> {
    let n = p.labels.len();
    if p.features.iter().any(|r| r.len() != dim) {
        return Err(Error::Dimension(format!(
            "feature rows must have {dim} values"
        )));
    }
    let data = p.features.into_iter().flatten().collect();
    Dataset::new(Tensor::matrix(n.max(1), dim, data)?, p.labels, classes)
}

/// Writes a split with its generating spec as metadata.
pub fn save_split(split: &Split, spec: Option<&BlobSpec>, path: &Path) -> Result<()> {
    let mut metadata = BTreeMap::new();
    if let Some(spec) = spec {
        metadata.insert(
            "generator".into(),
            serde_json::Value::String("gaussian-blobs".into()),
        );
        metadata.insert(
            "spec".into(),
            serde_json::to_value(spec).map_err(|e| Error::malformed(path, e))?,
        );
    }
    let file = DatasetFile {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        dim: split.train.dim(),
        num_classes: split.train.num_classes,
        metadata,
        train: to_part(&split.train),
        test: to_part(&split.test),
    };
    let text = serde_json::to_string(&file).map_err(|e| Error::malformed(path, e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_split(path: &Path) -> Result<Split> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::malformed(path, e))?;
    check_header(&header, DATASET_FORMAT, DATASET_VERSION, path)?;
    let file: DatasetFile =
        serde_json::from_value(header).map_err(|e| Error::malformed(path, e))?;
    let (dim, classes) = (file.dim, file.num_classes);
    Ok(Split {
        train: from_part(file.train, dim, classes)?,
        test: from_part(file.test, dim, classes)?,
    })
}

pub(crate) fn check_header(
    value: &serde_json::Value,
    format: &str,
    supported: u32,
    path: &Path,
) -> Result<()> {
    let found_format = value.get("format").and_then(|f| f.as_str());
    if found_format != Some(format) {
        return Err(Error::malformed(
            path,
            format!("expected format `{format}`, found {found_format:?}"),
        ));
    }
    let version = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::malformed(path, "missing version"))?;
    if version > u64::from(supported) || version == 0 {
        return Err(Error::Version {
            found: version.min(u64::from(u32::MAX)) as u32,
            supported,
        });
    }
    Ok(())
}
