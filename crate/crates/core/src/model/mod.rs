//! Transformer encoder and predictor over windows of patch tokens.
//!
//! Every window is an independent sequence of `side * side` tokens. Masked
//! positions carry a learned mask token instead of their patch embedding; no
//! tokens are dropped. Attention logits get a learned per-head bias indexed by
//! the 2-D offset between tokens. Gradients are computed by hand
//! (see [`ModelState::backward`]).

mod checkpoint;
mod layers;
mod loss;
mod net;

pub use checkpoint::{CheckpointMeta, RngState};
pub use loss::{mim_loss, weighted_mse, window_loss_weights};
pub use net::{ForwardCache, TokenBatch, TokenSeq};

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{ArrayView1, ArrayView2, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Floating point types the network runs in (f32 for training, f64 for checks).
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Send
    + Sync
    + Debug
    + Default
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
pub(crate) fn sc<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("representable constant")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub patch_side: usize,
    pub embed_dim: usize,
    pub encoder_depth: usize,
    pub predictor_depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub target_dim: usize,
    /// Window side in patches; sizes the relative-position tables.
    pub window_side: usize,
    /// Use the eight-block predictor.
    #[serde(default)]
    pub paper_faithful: bool,
}

pub const FAITHFUL_PREDICTOR_DEPTH: usize = 8;

impl ModelConfig {
    /// Desk-scale default: p = 8, d = 128, 4 heads, 4 + 2 blocks, MLP ratio 4, w = 4.
    pub fn desk_default(target_dim: usize) -> Self {
        Self {
            patch_side: 8,
            embed_dim: 128,
            encoder_depth: 4,
            predictor_depth: 2,
            heads: 4,
            mlp_ratio: 4,
            target_dim,
            window_side: 4,
            paper_faithful: false,
        }
    }

    pub fn with_paper_faithful(mut self) -> Self {
        self.paper_faithful = true;
        self.predictor_depth = FAITHFUL_PREDICTOR_DEPTH;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("patch_side", self.patch_side),
            ("embed_dim", self.embed_dim),
            ("encoder_depth", self.encoder_depth),
            ("heads", self.heads),
            ("mlp_ratio", self.mlp_ratio),
            ("target_dim", self.target_dim),
            ("window_side", self.window_side),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be >= 1")));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::config(format!(
                "embed_dim ({}) must be divisible by heads ({})",
                self.embed_dim, self.heads
            )));
        }
        if self.paper_faithful && self.predictor_depth != FAITHFUL_PREDICTOR_DEPTH {
            return Err(Error::config(format!(
                "predictor_depth must be {FAITHFUL_PREDICTOR_DEPTH} when paper_faithful is set"
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn depth(&self) -> usize {
        self.encoder_depth + self.predictor_depth
    }

    pub fn hidden_dim(&self) -> usize {
        self.embed_dim * self.mlp_ratio
    }

    /// Entries per head in a relative-position table.
    pub fn rel_table_len(&self) -> usize {
        (2 * self.window_side - 1).pow(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
    NormGain,
    NormBias,
    MaskToken,
    RelBias,
}

impl ParamKind {
    /// Only projection matrices receive weight decay.
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::Weight)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BlockIds {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub qkv_w: usize,
    pub qkv_b: usize,
    pub rel_bias: usize,
    pub proj_w: usize,
    pub proj_b: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub fc1_w: usize,
    pub fc1_b: usize,
    pub fc2_w: usize,
    pub fc2_b: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub patch_w: usize,
    pub patch_b: usize,
    pub mask_token: usize,
    pub blocks: Vec<BlockIds>,
    pub enc_norm_g: usize,
    pub enc_norm_b: usize,
    pub pred_norm_g: usize,
    pub pred_norm_b: usize,
    pub head_w: usize,
    pub head_b: usize,
}

type Spec = (String, Vec<usize>, ParamKind);

fn build_layout(cfg: &ModelConfig) -> (Layout, Vec<Spec>) {
    let mut specs: Vec<Spec> = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, kind: ParamKind| {
        specs.push((name, shape, kind));
        specs.len() - 1
    };
    let d = cfg.embed_dim;
    let pp = cfg.patch_side * cfg.patch_side;
    let patch_w = push("patch_embed.weight".into(), vec![pp, d], ParamKind::Weight);
    let patch_b = push("patch_embed.bias".into(), vec![d], ParamKind::Bias);
    let mask_token = push("mask_token".into(), vec![d], ParamKind::MaskToken);
    let mut blocks = Vec::with_capacity(cfg.depth());
    let mut enc_norm = (0, 0);
    for i in 0..cfg.depth() {
        let prefix = if i < cfg.encoder_depth {
            format!("encoder.{i}")
        } else {
            format!("predictor.{}", i - cfg.encoder_depth)
        };
        let ids = BlockIds {
            ln1_g: push(format!("{prefix}.norm1.weight"), vec![d], ParamKind::NormGain),
            ln1_b: push(format!("{prefix}.norm1.bias"), vec![d], ParamKind::NormBias),
            qkv_w: push(format!("{prefix}.attn.qkv.weight"), vec![d, 3 * d], ParamKind::Weight),
            qkv_b: push(format!("{prefix}.attn.qkv.bias"), vec![3 * d], ParamKind::Bias),
            rel_bias: push(
                format!("{prefix}.attn.rel_pos_bias"),
                vec![cfg.heads, cfg.rel_table_len()],
                ParamKind::RelBias,
            ),
            proj_w: push(format!("{prefix}.attn.proj.weight"), vec![d, d], ParamKind::Weight),
            proj_b: push(format!("{prefix}.attn.proj.bias"), vec![d], ParamKind::Bias),
            ln2_g: push(format!("{prefix}.norm2.weight"), vec![d], ParamKind::NormGain),
            ln2_b: push(format!("{prefix}.norm2.bias"), vec![d], ParamKind::NormBias),
            fc1_w: push(format!("{prefix}.mlp.fc1.weight"), vec![d, cfg.hidden_dim()], ParamKind::Weight),
            fc1_b: push(format!("{prefix}.mlp.fc1.bias"), vec![cfg.hidden_dim()], ParamKind::Bias),
            fc2_w: push(format!("{prefix}.mlp.fc2.weight"), vec![cfg.hidden_dim(), d], ParamKind::Weight),
            fc2_b: push(format!("{prefix}.mlp.fc2.bias"), vec![d], ParamKind::Bias),
        };
        blocks.push(ids);
        if i + 1 == cfg.encoder_depth {
            enc_norm = (
                push("encoder_norm.weight".into(), vec![d], ParamKind::NormGain),
                push("encoder_norm.bias".into(), vec![d], ParamKind::NormBias),
            );
        }
    }
    let pred_norm_g = push("predictor_norm.weight".into(), vec![d], ParamKind::NormGain);
    let pred_norm_b = push("predictor_norm.bias".into(), vec![d], ParamKind::NormBias);
    let head_w = push("head.weight".into(), vec![d, cfg.target_dim], ParamKind::Weight);
    let head_b = push("head.bias".into(), vec![cfg.target_dim], ParamKind::Bias);
    (
        Layout {
            patch_w,
            patch_b,
            mask_token,
            blocks,
            enc_norm_g: enc_norm.0,
            enc_norm_b: enc_norm.1,
            pred_norm_g,
            pred_norm_b,
            head_w,
            head_b,
        },
        specs,
    )
}

/// All learnable tensors plus the architecture that interprets them.
#[derive(Debug, Clone)]
pub struct ModelState<T> {
    config: ModelConfig,
    tensors: Vec<Tensor<T>>,
    pub(crate) layout: Layout,
}

/// Gradient buffers aligned with [`ModelState::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    pub data: Vec<Vec<T>>,
}

impl<T: Scalar> Grads<T> {
    pub fn zeros_like(state: &ModelState<T>) -> Self {
        Self {
            data: state.tensors.iter().map(|t| vec![T::zero(); t.data.len()]).collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for g in &mut self.data {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }


    pub fn all_finite(&self) -> bool {
        self.data.iter().flatten().all(|v| v.is_finite())
    }
}

impl<T: Scalar> ModelState<T> {
    /// Truncated-normal (std 0.02, cut at two std) projections and mask token,
    /// zero biases and relative-position tables, unit norm gains.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = build_layout(config);
        let mut rng = rng_from_seed(seed);
        let normal = Normal::new(0.0, 0.02).expect("valid normal");
        let tensors = specs
            .into_iter()
            .map(|(name, shape, kind)| {
                let n: usize = shape.iter().product();
                let data = match kind {
                    ParamKind::Weight | ParamKind::MaskToken => (0..n)
                        .map(|_| loop {
                            let v: f64 = normal.sample(&mut rng);
                            if v.abs() <= 0.04 {
                                break sc::<T>(v);
                            }
                        })
                        .collect(),
                    ParamKind::NormGain => vec![T::one(); n],
                    ParamKind::Bias | ParamKind::NormBias | ParamKind::RelBias => vec![T::zero(); n],
                };
                Tensor {
                    name,
                    shape,
                    kind,
                    data,
                }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            tensors,
            layout,
        })
    }

    /// Rebuilds a state from named tensors, checking names and shapes against the config.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = build_layout(config);
        if specs.len() != tensors.len() {
            return Err(Error::shape(format!(
                "expected {} tensors, found {}",
                specs.len(),
                tensors.len()
            )));
        }
        for ((name, shape, _), t) in specs.iter().zip(&tensors) {
            if *name != t.name || *shape != t.shape || t.data.len() != t.numel() {
                return Err(Error::shape(format!(
                    "tensor {} {:?} does not match expected {name} {shape:?}",
                    t.name, t.shape
                )));
            }
        }
        Ok(Self {
            config: config.clone(),
            tensors,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().flat_map(|t| &t.data).all(|v| v.is_finite())
    }

    /// True for tensors belonging to the encoder side (embedding, mask token,
    /// encoder blocks, encoder norm).
    pub fn is_encoder_tensor(&self, id: usize) -> bool {
        let name = &self.tensors[id].name;
        name.starts_with("encoder") || name.starts_with("patch_embed") || name == "mask_token"
    }

    pub(crate) fn mat(&self, id: usize) -> ArrayView2<'_, T> {
        let t = &self.tensors[id];
        ArrayView2::from_shape((t.shape[0], t.shape[1]), &t.data).expect("matrix tensor")
    }

    pub(crate) fn vec(&self, id: usize) -> ArrayView1<'_, T> {
        ArrayView1::from(&self.tensors[id].data[..])
    }

    pub(crate) fn slice(&self, id: usize) -> &[T] {
        &self.tensors[id].data
    }

    /// Converts every tensor to another float type.
    pub fn cast<U: Scalar>(&self) -> ModelState<U> {
        ModelState {
            config: self.config.clone(),
            layout: self.layout.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    kind: t.kind,
                    data: t.data.iter().map(|v| sc::<U>(v.to_f64().unwrap_or(f64::NAN))).collect(),
                })
                .collect(),
        }
    }
}
