//! The multi-scale upscaling generator and the encoder/decoder front-end.
//!
//! All trainable tensors of a bundle live in one [`ParamStore`]; the network
//! structs only hold handles into it. Normalization layers use per-sample
//! statistics, so training and inference run the same computation.

mod checkpoint;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::imaging::{binarize, resample, resize_plan, Dims, Image, Palette, PyramidLadder, PyramidSpec};
use crate::nn::{Graph, ParamId, ParamStore, ResizePlan, Tensor, Var};
use crate::{Error, FieldError, Result};

pub use checkpoint::{
    config_hash, load_checkpoint, read_manifest, save_checkpoint, CheckpointManifest, ParamEntry,
    CHECKPOINT_VERSION,
};

const LEAK: f64 = 0.2;
/// A downscaled edge map marks a pixel as edge when any channel exceeds this
/// (about 12% edge coverage in the source footprint).
pub const EDGE_THRESHOLD: f64 = -0.75;
/// Default standard deviation of the latent noise during training.
pub const DEFAULT_NOISE_SIGMA: f64 = 0.01;

/// Architecture hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Feature channels inside each generator block.
    pub channels: usize,
    /// Conv-BN-LeakyReLU layers between a block's head and tail.
    pub body_layers: usize,
    /// Channels of the three stride-2 encoder stages; the last is the code depth.
    pub encoder_channels: [usize; 3],
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            body_layers: 3,
            encoder_channels: [32, 64, 128],
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn field_errors(&self, prefix: &str) -> Vec<FieldError> {
        let mut errs = Vec::new();
        if self.channels == 0 {
            errs.push(FieldError::new(format!("{prefix}channels"), "must be at least 1"));
        }
        if self.encoder_channels.contains(&0) {
            errs.push(FieldError::new(
                format!("{prefix}encoder_channels"),
                "every stage needs at least 1 channel",
            ));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            errs.push(FieldError::new(format!("{prefix}init_std"), "must be positive"));
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.field_errors("");
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errs))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Generator driven by the encoder/decoder front-end.
    Unconditional,
    /// Generator driven directly by a preprocessed conditioning image.
    Conditional,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Unconditional => "unconditional",
            Mode::Conditional => "conditional",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditionSource {
    #[default]
    None,
    PaintQuantized,
    EdgeMap,
}

impl ConditionSource {
    pub fn mode(self) -> Mode {
        match self {
            ConditionSource::None => Mode::Unconditional,
            _ => Mode::Conditional,
        }
    }
}

/// Convolution followed by normalization and leaky ReLU.
#[derive(Debug, Clone, Copy)]
struct ConvBn {
    w: ParamId,
    gamma: ParamId,
    beta: ParamId,
}

impl ConvBn {
    fn new(ps: &mut ParamStore, name: &str, c_in: usize, c_out: usize, k: usize, std: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w: ps.add_normal(format!("{name}.w"), &[c_out, c_in, k, k], 0.0, std, rng),
            gamma: ps.add(format!("{name}.gamma"), Tensor::full(&[c_out], 1.0)),
            beta: ps.add(format!("{name}.beta"), Tensor::zeros(&[c_out])),
        }
    }

    fn forward(&self, g: &mut Graph, x: Var, stride: usize) -> Var {
        let p = g.reflect_pad(x, 1);
        let w = g.param(self.w);
        let y = g.conv2d(p, w, None, stride);
        let (ga, be) = (g.param(self.gamma), g.param(self.beta));
        let y = g.batch_norm(y, ga, be);
        g.leaky_relu(y, LEAK)
    }
}

/// Graph handles produced by one generator block.
#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    /// Bicubic lift of the block input to the output dims.
    pub upsampled: Var,
    pub residual: Var,
    /// `upsampled + residual`.
    pub output: Var,
}

/// Values produced by one generator block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockOutput {
    pub upsampled: Tensor,
    pub residual: Tensor,
    pub output: Tensor,
}

/// One upscaling step: bicubic lift plus a learned residual.
#[derive(Debug, Clone)]
pub struct GeneratorBlock {
    head: ConvBn,
    body: Vec<ConvBn>,
    tail_w: ParamId,
    tail_b: ParamId,
}

impl GeneratorBlock {
    pub fn forward(&self, g: &mut Graph, x: Var, out: Dims) -> BlockVars {
        let (_, h, w) = g.value(x).chw();
        let upsampled = g.resize(x, plan(h, w, out));
        let mut y = self.head.forward(g, upsampled, 1);
        for layer in &self.body {
            y = layer.forward(g, y, 1);
        }
        let p = g.reflect_pad(y, 1);
        let (tw, tb) = (g.param(self.tail_w), g.param(self.tail_b));
        let r = g.conv2d(p, tw, Some(tb), 1);
        let residual = g.tanh(r);
        let output = g.add(upsampled, residual);
        BlockVars {
            upsampled,
            residual,
            output,
        }
    }

    /// Parameters of the final convolution (zeroing them silences the residual).
    pub fn tail(&self) -> (ParamId, ParamId) {
        (self.tail_w, self.tail_b)
    }
}

fn plan(h: usize, w: usize, out: Dims) -> Arc<ResizePlan> {
    resize_plan(h, w, out.h, out.w)
}

/// `N` blocks; block `n` (1-based) lifts level `n − 1` to level `n`.
#[derive(Debug, Clone)]
pub struct UpscalingGenerator {
    blocks: Vec<GeneratorBlock>,
}

impl UpscalingGenerator {
    fn new(ps: &mut ParamStore, n: usize, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let c = cfg.channels;
        let std = cfg.init_std;
        let blocks = (1..=n)
            .map(|b| {
                let name = format!("gen.{b}");
                let head = ConvBn::new(ps, &format!("{name}.head"), 3, c, 3, std, rng);
                let body = (0..cfg.body_layers)
                    .map(|i| ConvBn::new(ps, &format!("{name}.body{i}"), c, c, 3, std, rng))
                    .collect();
                let tail_w = ps.add_normal(format!("{name}.tail.w"), &[3, c, 3, 3], 0.0, std, rng);
                let tail_b = ps.add(format!("{name}.tail.b"), Tensor::zeros(&[3]));
                GeneratorBlock {
                    head,
                    body,
                    tail_w,
                    tail_b,
                }
            })
            .collect();
        Self { blocks }
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[GeneratorBlock] {
        &self.blocks
    }

    /// Runs blocks `from + 1 ..= N` on `x`, which must sit at level `from`.
    pub fn forward(&self, g: &mut Graph, x: Var, ladder: &PyramidLadder, from: usize) -> Vec<BlockVars> {
        let mut cur = x;
        self.blocks[from..]
            .iter()
            .zip(&ladder.dims[from + 1..])
            .map(|(b, &d)| {
                let v = b.forward(g, cur, d);
                cur = v.output;
                v
            })
            .collect()
    }
}

/// Three stride-2 conv/normalization/leaky-ReLU stages.
#[derive(Debug, Clone)]
pub struct Encoder {
    stages: Vec<ConvBn>,
}

impl Encoder {
    fn new(ps: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut c_in = 3;
        let stages = cfg
            .encoder_channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let s = ConvBn::new(ps, &format!("enc.{i}"), c_in, c, 4, cfg.init_std, rng);
                c_in = c;
                s
            })
            .collect();
        Self { stages }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        self.stages.iter().fold(x, |x, s| s.forward(g, x, 2))
    }

    /// Spatial size of the code for an input of `dims`.
    pub fn code_dims(dims: Dims) -> Dims {
        let f = |n: usize| (0..3).fold(n, |n, _| (n + 2 - 4) / 2 + 1);
        Dims::new(f(dims.h), f(dims.w))
    }
}

#[derive(Debug, Clone)]
struct DeconvStage {
    w: ParamId,
    bias: Option<ParamId>,
    norm: Option<(ParamId, ParamId)>,
}

/// Mirror of the encoder: stride-2 transposed convolutions, a bicubic fit to
/// the exact target dims, and a final tanh.
#[derive(Debug, Clone)]
pub struct Decoder {
    stages: Vec<DeconvStage>,
}

impl Decoder {
    fn new(ps: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let [c1, c2, c3] = cfg.encoder_channels;
        let chans = [(c3, c2), (c2, c1), (c1, 3)];
        let stages = chans
            .iter()
            .enumerate()
            .map(|(i, &(ci, co))| {
                let w = ps.add_normal(format!("dec.{i}.w"), &[ci, co, 4, 4], 0.0, cfg.init_std, rng);
                if i < 2 {
                    let gamma = ps.add(format!("dec.{i}.gamma"), Tensor::full(&[co], 1.0));
                    let beta = ps.add(format!("dec.{i}.beta"), Tensor::zeros(&[co]));
                    DeconvStage {
                        w,
                        bias: None,
                        norm: Some((gamma, beta)),
                    }
                } else {
                    let b = ps.add(format!("dec.{i}.b"), Tensor::zeros(&[co]));
                    DeconvStage {
                        w,
                        bias: Some(b),
                        norm: None,
                    }
                }
            })
            .collect();
        Self { stages }
    }

    pub fn forward(&self, g: &mut Graph, z: Var, out: Dims) -> Var {
        let mut x = z;
        for s in &self.stages {
            let w = g.param(s.w);
            let b = s.bias.map(|b| g.param(b));
            x = g.conv_transpose2d(x, w, b, 2, 1);
            if let Some((ga, be)) = s.norm {
                let (ga, be) = (g.param(ga), g.param(be));
                x = g.batch_norm(x, ga, be);
                x = g.relu(x);
            }
        }
        let (_, h, w) = g.value(x).chw();
        let x = g.resize(x, plan(h, w, out));
        g.tanh(x)
    }
}

/// Encoder/decoder pair of an unconditional bundle.
#[derive(Debug, Clone)]
pub struct Vae {
    pub encoder: Encoder,
    pub decoder: Decoder,
}

/// Spatial latent code, stored `[channels, h, w]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCode {
    pub tensor: Tensor,
}

impl LatentCode {
    /// `(h, w, channels)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        let (c, h, w) = self.tensor.chw();
        (h, w, c)
    }

    /// `alpha · a + (1 − alpha) · b`.
    pub fn blend(a: &LatentCode, b: &LatentCode, alpha: f64) -> Result<LatentCode> {
        if a.tensor.shape() != b.tensor.shape() {
            return Err(Error::DimMismatch {
                expected: format!("code {:?}", a.tensor.shape()),
                actual: format!("{:?}", b.tensor.shape()),
            });
        }
        let data = a
            .tensor
            .data()
            .iter()
            .zip(b.tensor.data())
            .map(|(x, y)| alpha * x + (1.0 - alpha) * y)
            .collect();
        Ok(LatentCode {
            tensor: Tensor::new(a.tensor.shape().to_vec(), data),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.tensor.all_finite()
    }
}

/// Everything needed to run a trained model.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub params: ParamStore,
    pub generator: UpscalingGenerator,
    pub vae: Option<Vae>,
    pub config: ModelConfig,
    pub ladder: PyramidLadder,
    pub pyramid: PyramidSpec,
    pub condition: ConditionSource,
    /// Quantization palette for paint-conditioned bundles.
    pub palette: Option<Palette>,
    /// Snapshot of the training configuration, if trained.
    pub train_config: Option<serde_json::Value>,
}

impl ModelBundle {
    /// Freshly initialized bundle; the encoder/decoder exist iff `condition` is `None`.
    pub fn new(
        config: ModelConfig,
        ladder: PyramidLadder,
        pyramid: PyramidSpec,
        condition: ConditionSource,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let generator = UpscalingGenerator::new(&mut params, ladder.num_blocks(), &config, &mut rng);
        let vae = (condition.mode() == Mode::Unconditional).then(|| Vae {
            encoder: Encoder::new(&mut params, &config, &mut rng),
            decoder: Decoder::new(&mut params, &config, &mut rng),
        });
        Ok(Self {
            params,
            generator,
            vae,
            config,
            ladder,
            pyramid,
            condition,
            palette: None,
            train_config: None,
        })
    }

    pub fn mode(&self) -> Mode {
        if self.vae.is_some() {
            Mode::Unconditional
        } else {
            Mode::Conditional
        }
    }

    pub fn num_levels(&self) -> usize {
        self.ladder.num_levels()
    }

    pub fn vae(&self) -> Result<&Vae> {
        self.vae.as_ref().ok_or(Error::ModeMismatch {
            required: Mode::Unconditional.to_string(),
            actual: Mode::Conditional.to_string(),
        })
    }

    pub fn require_mode(&self, mode: Mode) -> Result<()> {
        if self.mode() == mode {
            Ok(())
        } else {
            Err(Error::ModeMismatch {
                required: mode.to_string(),
                actual: self.mode().to_string(),
            })
        }
    }

    /// Downscales a conditioning image to the coarsest level and restores its
    /// discrete structure (palette colors or binary edges).
    pub fn prepare_condition(&self, img: &Image) -> Result<Image> {
        let d = self.ladder.coarsest();
        let small = resample(img, d.h, d.w)?;
        match self.condition {
            ConditionSource::None => Err(Error::ModeMismatch {
                required: Mode::Conditional.to_string(),
                actual: Mode::Unconditional.to_string(),
            }),
            ConditionSource::PaintQuantized => {
                let palette = self.palette.as_ref().ok_or_else(|| {
                    Error::InvalidArgument("paint-conditioned bundle has no palette".into())
                })?;
                Ok(palette.apply(&small))
            }
            ConditionSource::EdgeMap => Ok(binarize(&small, EDGE_THRESHOLD)),
        }
    }

    /// Sets every block's final convolution to zero, making each block a pure
    /// bicubic upscaler.
    pub fn zero_residuals(&mut self) {
        for b in &self.generator.blocks {
            let (w, bias) = b.tail();
            self.params.get_mut(w).data_mut().fill(0.0);
            self.params.get_mut(bias).data_mut().fill(0.0);
        }
    }

    /// Runs blocks `from + 1 ..= N` of `ladder` starting from `x`.
    pub fn run_blocks(&self, x: &Image, ladder: &PyramidLadder, from: usize) -> Result<Vec<BlockOutput>> {
        if from >= ladder.num_levels() || ladder.num_blocks() != self.generator.num_blocks() {
            return Err(Error::InvalidArgument(format!(
                "cannot start at level {from} of a {}-level ladder with {} blocks",
                ladder.num_levels(),
                self.generator.num_blocks()
            )));
        }
        check_dims(x.dims(), ladder.dims[from])?;
        let mut g = Graph::new(&self.params);
        let x = g.input(x.to_tensor());
        let vars = self.generator.forward(&mut g, x, ladder, from);
        Ok(vars
            .iter()
            .map(|v| BlockOutput {
                upsampled: g.value(v.upsampled).clone(),
                residual: g.value(v.residual).clone(),
                output: g.value(v.output).clone(),
            })
            .collect())
    }

    /// Levels `1..=N` produced from a coarsest-level input.
    pub fn generate(&self, x0: &Image) -> Result<Vec<Image>> {
        self.inject_at_scale(x0, 0)
    }

    /// Levels `n + 1..=N` produced from an image at level `n`.
    pub fn inject_at_scale(&self, img: &Image, n: usize) -> Result<Vec<Image>> {
        if n >= self.num_levels().max(1) || (n > 0 && n >= self.generator.num_blocks()) {
            return Err(Error::InvalidArgument(format!(
                "injection level must lie in 0..{}, got {n}",
                self.generator.num_blocks()
            )));
        }
        self.run_blocks(img, &self.ladder, n)?
            .iter()
            .map(|o| Image::from_tensor(&o.output))
            .collect()
    }

    /// Code for a coarsest-level image.
    pub fn encode(&self, x0: &Image) -> Result<LatentCode> {
        check_dims(x0.dims(), self.ladder.coarsest())?;
        self.encode_any(x0)
    }

    /// Code for an image of any size (the encoder is fully convolutional).
    pub fn encode_any(&self, x: &Image) -> Result<LatentCode> {
        let vae = self.vae()?;
        let mut g = Graph::new(&self.params);
        let xv = g.input(x.to_tensor());
        let z = vae.encoder.forward(&mut g, xv);
        Ok(LatentCode {
            tensor: g.value(z).clone(),
        })
    }

    /// Adds `N(0, sigma²)` noise to `z` and decodes to the coarsest dims.
    pub fn decode(&self, z: &LatentCode, sigma: f64, rng: &mut impl Rng) -> Result<Image> {
        let expected = Encoder::code_dims(self.ladder.coarsest());
        let (h, w, c) = z.dims();
        if (h, w, c) != (expected.h, expected.w, self.config.encoder_channels[2]) {
            return Err(Error::DimMismatch {
                expected: format!("code {}x{}x{}", expected.h, expected.w, self.config.encoder_channels[2]),
                actual: format!("code {h}x{w}x{c}"),
            });
        }
        self.decode_to(z, sigma, rng, self.ladder.coarsest())
    }

    /// Decodes to arbitrary output dims.
    pub fn decode_to(&self, z: &LatentCode, sigma: f64, rng: &mut impl Rng, out: Dims) -> Result<Image> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise sigma must be non-negative, got {sigma}"
            )));
        }
        let (c, _, _) = z.tensor.chw();
        if c != self.config.encoder_channels[2] {
            return Err(Error::DimMismatch {
                expected: format!("{} code channels", self.config.encoder_channels[2]),
                actual: format!("{c} code channels"),
            });
        }
        let vae = self.vae()?;
        let mut noisy = z.tensor.clone();
        if sigma > 0.0 {
            for v in noisy.data_mut() {
                *v += sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let mut g = Graph::new(&self.params);
        let zv = g.input(noisy);
        let y = vae.decoder.forward(&mut g, zv, out);
        Image::from_tensor(g.value(y))
    }
}

fn check_dims(actual: Dims, expected: Dims) -> Result<()> {
    if actual != expected {
        return Err(Error::DimMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        });
    }
    Ok(())
}

/// Levels `1..=N` from a coarsest-level input.
pub fn generator_forward(bundle: &ModelBundle, x0: &Image) -> Result<Vec<Image>> {
    bundle.generate(x0)
}

pub fn encode(bundle: &ModelBundle, x0: &Image) -> Result<LatentCode> {
    bundle.encode(x0)
}

pub fn decode(bundle: &ModelBundle, z: &LatentCode, noise_sigma: f64, rng: &mut impl Rng) -> Result<Image> {
    bundle.decode(z, noise_sigma, rng)
}

pub fn inject_at_scale(bundle: &ModelBundle, img: &Image, n: usize) -> Result<Vec<Image>> {
    bundle.inject_at_scale(img, n)
}
