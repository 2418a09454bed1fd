//! Frozen feature extractors for the perceptual loss.

use std::path::{Path, PathBuf};

use hossnet_autograd::{Graph, Tensor, Var};
use ndarray::IxDyn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use safetensors::{Dtype, SafeTensors};
use serde::{Deserialize, Serialize};

use crate::layers::he_normal;
use crate::{ModelError, Result};

/// Maps single-channel frames `[N, 1, H, W]` to a feature tensor. Weights
/// enter the graph as constants and are never updated.
pub trait FeatureExtractor: Send + Sync {
    fn name(&self) -> &str;
    fn features(&self, g: &mut Graph, x: Var) -> Result<Var>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExtractorSpec {
    /// torchvision-layout VGG16 `features.*` weights in a safetensors file,
    /// truncated after `features.{layer}`.
    Vgg16 { weights_path: PathBuf, layer: usize },
    RandomConv { seed: u64, widths: Vec<usize> },
}

impl Default for ExtractorSpec {
    fn default() -> Self {
        ExtractorSpec::Vgg16 { weights_path: PathBuf::from("weights/vgg16_features.safetensors"), layer: VGG16_DEFAULT_LAYER }
    }
}

impl ExtractorSpec {
    pub fn random_conv() -> Self {
        ExtractorSpec::RandomConv { seed: 1234, widths: vec![8, 8] }
    }
}

pub fn build_extractor(spec: &ExtractorSpec) -> Result<Box<dyn FeatureExtractor>> {
    Ok(match spec {
        ExtractorSpec::Vgg16 { weights_path, layer } => Box::new(Vgg16Extractor::load(weights_path, *layer)?),
        ExtractorSpec::RandomConv { seed, widths } => Box::new(RandomConvExtractor::new(*seed, widths)),
    })
}

/// Small fixed random convolution stack (3×3 conv + ReLU per width).
pub struct RandomConvExtractor {
    layers: Vec<(Tensor, Tensor)>,
}

impl RandomConvExtractor {
    pub fn new(seed: u64, widths: &[usize]) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = 1;
        let layers = widths
            .iter()
            .map(|&c| {
                let w = he_normal(&mut rng, &[c, cin, 3, 3], cin * 9);
                let b = Tensor::zeros(IxDyn(&[c]));
                cin = c;
                (w, b)
            })
            .collect();
        Self { layers }
    }
}

impl FeatureExtractor for RandomConvExtractor {
    fn name(&self) -> &str {
        "random_conv"
    }

    fn features(&self, g: &mut Graph, mut x: Var) -> Result<Var> {
        for (w, b) in &self.layers {
            let (wv, bv) = (g.constant(w.clone()), g.constant(b.clone()));
            let y = g.conv2d(x, wv, Some(bv), 1)?;
            x = g.relu(y);
        }
        Ok(x)
    }
}

pub const VGG16_DEFAULT_LAYER: usize = 8;
const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];
const VGG16_CFG: [usize; 18] = [64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0];

enum VggOp {
    Conv(Tensor, Tensor),
    Relu,
    Pool,
}

pub struct Vgg16Extractor {
    ops: Vec<VggOp>,
}

fn to_f64(view: &safetensors::tensor::TensorView<'_>, name: &str) -> Result<Tensor> {
    let data = view.data();
    let values: Vec<f64> = match view.dtype() {
        Dtype::F32 => data.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect(),
        Dtype::F64 => data.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect(),
        other => return Err(ModelError::Checkpoint(format!("{name}: unsupported dtype {other:?}"))),
    };
    Tensor::from_shape_vec(IxDyn(view.shape()), values).map_err(|e| ModelError::Checkpoint(format!("{name}: {e}")))
}

impl Vgg16Extractor {
    pub fn load(path: &Path, layer: usize) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| {
            ModelError::Config(format!(
                "VGG16 weights unavailable at {} ({e}); set alpha_perc = 0 or select the random_conv extractor",
                path.display()
            ))
        })?;
        let st = SafeTensors::deserialize(&bytes).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        let mut ops = Vec::new();
        let mut idx = 0;
        let mut cin = 3;
        for &c in &VGG16_CFG {
            if idx > layer {
                break;
            }
            if c == 0 {
                ops.push(VggOp::Pool);
                idx += 1;
                continue;
            }
            let get = |suffix: &str| -> Result<Tensor> {
                let name = format!("features.{idx}.{suffix}");
                let view = st.tensor(&name).map_err(|e| ModelError::Checkpoint(format!("{name}: {e}")))?;
                to_f64(&view, &name)
            };
            let (w, b) = (get("weight")?, get("bias")?);
            if w.shape() != [c, cin, 3, 3] || b.shape() != [c] {
                return Err(ModelError::Checkpoint(format!("features.{idx}: unexpected shape {:?}", w.shape())));
            }
            ops.push(VggOp::Conv(w, b));
            idx += 1;
            if idx <= layer {
                ops.push(VggOp::Relu);
            }
            idx += 1;
            cin = c;
        }
        if ops.is_empty() {
            return Err(ModelError::Config(format!("VGG16 layer {layer} selects no operations")));
        }
        Ok(Self { ops })
    }
}

impl FeatureExtractor for Vgg16Extractor {
    fn name(&self) -> &str {
        "vgg16"
    }

    fn features(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let rgb = g.concat_channels(&[x, x, x])?;
        let scale: Vec<f64> = IMAGENET_STD.iter().map(|s| 1.0 / s).collect();
        let shift: Vec<f64> = IMAGENET_MEAN.iter().zip(&IMAGENET_STD).map(|(m, s)| -m / s).collect();
        let mut h = g.channel_affine(rgb, &scale, &shift)?;
        for op in &self.ops {
            h = match op {
                VggOp::Conv(w, b) => {
                    let (wv, bv) = (g.constant(w.clone()), g.constant(b.clone()));
                    g.conv2d(h, wv, Some(bv), 1)?
                }
                VggOp::Relu => g.relu(h),
                VggOp::Pool => g.max_pool2x2(h)?,
            };
        }
        Ok(h)
    }
}
