//! Single-image Fréchet distance between the spatial statistics of deep
//! features.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::imaging::Image;
use crate::nn::{Graph, ParamStore, Tensor};
use crate::pretrained::{locate, WeightMap};
use crate::{Error, Result};

/// File looked up inside the weights directory.
pub const INCEPTION_FILE: &str = "inception_v3.safetensors";
/// Side of the square patches used by the fallback extractor.
pub const RAW_PATCH_SIZE: usize = 7;
const BN_EPS: f64 = 1e-3;

/// Mean and covariance of feature vectors over spatial positions.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl FeatureStats {
    /// Treats each position of a `[C, H, W]` map as one sample of a
    /// `C`-dimensional vector; the covariance is unbiased.
    pub fn from_feature_map(t: &Tensor) -> Result<Self> {
        let (c, h, w) = t.chw();
        let n = h * w;
        if n < 2 {
            return Err(Error::DegenerateConfiguration(format!(
                "need at least 2 feature positions, got {n}"
            )));
        }
        // samples as rows
        let x = DMatrix::from_fn(n, c, |i, k| t.data()[k * n + i]);
        let mean = DVector::from_fn(c, |k, _| x.column(k).sum() / n as f64);
        let centered = DMatrix::from_fn(n, c, |i, k| x[(i, k)] - mean[k]);
        let mut cov = centered.tr_mul(&centered) / (n - 1) as f64;
        cov = (&cov + cov.transpose()) * 0.5;
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.cov.clone()).eigenvalues.min()
    }
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let s = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&s) * e.eigenvectors.transpose()
}

/// `‖μ₁ − μ₂‖² + Tr(C₁ + C₂ − 2 (C₁^½ C₂ C₁^½)^½)`, with negative
/// eigenvalues clipped to zero.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            expected: format!("{} feature channels", a.dim()),
            actual: format!("{} feature channels", b.dim()),
        });
    }
    let diff = (&a.mean - &b.mean).norm_squared();
    let s1 = psd_sqrt(&a.cov);
    let inner = &s1 * &b.cov * &s1;
    let cross: f64 = SymmetricEigen::new((&inner + inner.transpose()) * 0.5)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum();
    Ok((diff + a.cov.trace() + b.cov.trace() - 2.0 * cross).max(0.0))
}

/// Convolution with batch normalization folded in.
#[derive(Debug, Clone)]
pub struct FoldedConv {
    w: Tensor,
    b: Tensor,
    pad: usize,
    stride: usize,
}

/// Source of per-position feature vectors.
#[derive(Debug, Clone)]
pub enum Extractor {
    /// Flattened `RAW_PATCH_SIZE²` RGB patches at every valid position.
    RawPatch,
    /// First block of an Inception-v3 classifier, up to its first max-pool.
    Inception(Vec<FoldedConv>),
}

impl Extractor {
    /// Inception weights from `dir` or the weights environment variable.
    pub fn locate(dir: Option<&Path>) -> Result<Self> {
        Self::load_inception(locate(dir, INCEPTION_FILE)?)
    }

    /// Loads torchvision-style `Conv2d_1a_3x3`, `Conv2d_2a_3x3` and
    /// `Conv2d_2b_3x3` weights, folding batch normalization into the convs.
    pub fn load_inception(path: impl AsRef<Path>) -> Result<Self> {
        let mut m = WeightMap::load(path)?;
        let mut convs = Vec::new();
        for (name, pad, stride) in [("Conv2d_1a_3x3", 0, 2), ("Conv2d_2a_3x3", 0, 1), ("Conv2d_2b_3x3", 1, 1)] {
            let w = m.take_any(&format!("{name}.conv.weight"))?;
            let c_out = w.shape()[0];
            let gamma = m.take(&format!("{name}.bn.weight"), &[c_out])?;
            let beta = m.take(&format!("{name}.bn.bias"), &[c_out])?;
            let mean = m.take(&format!("{name}.bn.running_mean"), &[c_out])?;
            let var = m.take(&format!("{name}.bn.running_var"), &[c_out])?;
            let per = w.len() / c_out;
            let mut wd = w.data().to_vec();
            let mut bd = vec![0.0; c_out];
            for o in 0..c_out {
                let s = gamma.data()[o] / (var.data()[o] + BN_EPS).sqrt();
                wd[o * per..(o + 1) * per].iter_mut().for_each(|v| *v *= s);
                bd[o] = beta.data()[o] - mean.data()[o] * s;
            }
            convs.push(FoldedConv {
                w: Tensor::new(w.shape().to_vec(), wd),
                b: Tensor::new(vec![c_out], bd),
                pad,
                stride,
            });
        }
        let c_in = convs[0].w.shape()[1];
        if c_in != 3 {
            return Err(Error::DimMismatch {
                expected: "3 input channels".into(),
                actual: format!("{c_in} input channels"),
            });
        }
        Ok(Extractor::Inception(convs))
    }

    pub fn id(&self) -> &'static str {
        match self {
            Extractor::RawPatch => "raw-patch-7x7",
            Extractor::Inception(_) => "inception-v3-block1",
        }
    }

    /// `[C, H', W']` feature map of an image.
    pub fn features(&self, img: &Image) -> Result<Tensor> {
        match self {
            Extractor::RawPatch => raw_patches(img),
            Extractor::Inception(convs) => {
                let store = ParamStore::new();
                let mut g = Graph::new(&store);
                let mut h = g.input(img.to_tensor());
                for c in convs {
                    let (_, hh, ww) = g.value(h).chw();
                    if hh + 2 * c.pad < 3 || ww + 2 * c.pad < 3 {
                        return Err(too_small(img));
                    }
                    if c.pad > 0 {
                        h = g.zero_pad(h, c.pad);
                    }
                    let (w, b) = (g.constant(&c.w), g.constant(&c.b));
                    let y = g.conv2d(h, w, Some(b), c.stride);
                    h = g.relu(y);
                }
                let (_, hh, ww) = g.value(h).chw();
                if hh < 3 || ww < 3 {
                    return Err(too_small(img));
                }
                let p = g.max_pool(h, 3, 2);
                Ok(g.value(p).clone())
            }
        }
    }

    pub fn feature_stats(&self, img: &Image) -> Result<FeatureStats> {
        FeatureStats::from_feature_map(&self.features(img)?)
    }
}

fn too_small(img: &Image) -> Error {
    Error::InvalidArgument(format!("image {} is too small for feature extraction", img.dims()))
}

fn raw_patches(img: &Image) -> Result<Tensor> {
    let k = RAW_PATCH_SIZE;
    let (h, w) = (img.height(), img.width());
    if h < k || w < k {
        return Err(too_small(img));
    }
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut data = Vec::with_capacity(3 * k * k * oh * ow);
    for c in 0..3 {
        for dy in 0..k {
            for dx in 0..k {
                for y in 0..oh {
                    for x in 0..ow {
                        data.push(img.get(c, y + dy, x + dx));
                    }
                }
            }
        }
    }
    Ok(Tensor::new(vec![3 * k * k, oh, ow], data))
}

/// Statistics of `img` under `extractor`.
pub fn feature_stats(extractor: &Extractor, img: &Image) -> Result<FeatureStats> {
    extractor.feature_stats(img)
}

/// Fréchet distance between the feature statistics of two images.
pub fn sifid(extractor: &Extractor, a: &Image, b: &Image) -> Result<f64> {
    frechet_distance(&extractor.feature_stats(a)?, &extractor.feature_stats(b)?)
}

/// Machine-readable result of one comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SifidReport {
    pub image_a: String,
    pub image_b: String,
    pub sifid: f64,
    pub extractor_id: String,
}
