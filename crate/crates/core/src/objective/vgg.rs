//! Frozen VGG-16 feature taps (torchvision `features.*` layout).

use std::path::Path;

use crate::nn::{Graph, Tensor, Var};
use crate::pretrained::{locate, WeightMap};
use crate::Result;

/// File looked up inside the weights directory.
pub const VGG16_FILE: &str = "vgg16.safetensors";

/// `features` indices of the convolutions before the fourth pooling layer,
/// grouped by pooling stage.
const STAGES: [&[usize]; 4] = [&[0, 2], &[5, 7], &[10, 12, 14], &[17, 19, 21]];
const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone)]
struct Conv {
    w: Tensor,
    b: Tensor,
}

#[derive(Debug, Clone)]
pub struct Vgg16 {
    stages: Vec<Vec<Conv>>,
    norm_w: Tensor,
    norm_b: Tensor,
}

impl Vgg16 {
    /// Loads from `dir`, or from the weights environment variable.
    pub fn locate(dir: Option<&Path>) -> Result<Self> {
        Self::load(locate(dir, VGG16_FILE)?)
    }

    /// Loads from a file; channel widths are taken from the stored tensors.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut m = WeightMap::load(path)?;
        let mut c_in = 3;
        let mut stages = Vec::new();
        for idx in STAGES {
            let mut convs = Vec::new();
            for i in idx {
                let w = m.take_any(&format!("features.{i}.weight"))?;
                let c_out = w.shape()[0];
                let w = if w.shape() == [c_out, c_in, 3, 3] {
                    w
                } else {
                    return Err(crate::Error::DimMismatch {
                        expected: format!("features.{i}.weight [{c_out}, {c_in}, 3, 3]"),
                        actual: format!("{:?}", w.shape()),
                    });
                };
                let b = m.take(&format!("features.{i}.bias"), &[c_out])?;
                convs.push(Conv { w, b });
                c_in = c_out;
            }
            stages.push(convs);
        }
        // [-1, 1] -> [0, 1] -> ImageNet standardization, as a 1x1 convolution
        let mut norm_w = Tensor::zeros(&[3, 3, 1, 1]);
        let mut norm_b = Tensor::zeros(&[3]);
        for c in 0..3 {
            norm_w.data_mut()[c * 3 + c] = 0.5 / IMAGENET_STD[c];
            norm_b.data_mut()[c] = (0.5 - IMAGENET_MEAN[c]) / IMAGENET_STD[c];
        }
        Ok(Self {
            stages,
            norm_w,
            norm_b,
        })
    }

    /// Activations after each of the first four pooling layers. Stages whose
    /// input is too small to pool are skipped.
    pub fn taps<'a>(&'a self, g: &mut Graph<'a>, x: Var) -> Vec<Var> {
        let (nw, nb) = (g.constant(&self.norm_w), g.constant(&self.norm_b));
        let mut h = g.conv2d(x, nw, Some(nb), 1);
        let mut taps = Vec::new();
        for stage in &self.stages {
            for conv in stage {
                let p = g.zero_pad(h, 1);
                let (w, b) = (g.constant(&conv.w), g.constant(&conv.b));
                let y = g.conv2d(p, w, Some(b), 1);
                h = g.relu(y);
            }
            let (_, hh, ww) = g.value(h).chw();
            if hh < 2 || ww < 2 {
                break;
            }
            h = g.max_pool(h, 2, 2);
            taps.push(h);
        }
        taps
    }
}
