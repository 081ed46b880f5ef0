//! Vision-transformer branch: patch extraction, linear patch embedding with
//! class token and learnable positional embeddings, pre-norm multi-head
//! self-attention encoder, and the two-token variant whose extra
//! distillation token carries the teacher signal during training. A valid
//! image of H x W pixels with patch size P yields N = H*W/P^2 tokens before
//! the special tokens are prepended.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::layers::{gelu, softmax, DropoutLayer, ForwardCtx, LayerNorm, LinearLayer};
use crate::scalar::Scalar;
use crate::tensor::{gather_op, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchEmbedConfig {
    pub image_h: usize,
    pub image_w: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub embed_dim: usize,
}

impl PatchEmbedConfig {
    pub fn validate(&self) -> Result<()> {
        let p = self.patch_size;
        if p == 0 || self.image_h % p != 0 || self.image_w % p != 0 {
            return Err(CoreError::config(format!(
                "patch size {p} must divide image {}x{}",
                self.image_h, self.image_w
            )));
        }
        Ok(())
    }

    /// Token count N = H*W / P^2.
    pub fn num_patches(&self) -> usize {
        (self.image_h * self.image_w) / (self.patch_size * self.patch_size)
    }

    /// Flattened patch width P^2 * C.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub depth: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub mlp_dim: usize,
    pub dropout: f64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(CoreError::config(format!(
                "embed dim {} must be divisible by head count {}",
                self.embed_dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CoreError::config(format!(
                "dropout rate must lie in [0,1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VitConfig {
    pub patch: PatchEmbedConfig,
    pub encoder: EncoderConfig,
    pub classes: usize,
    /// Enables the second learned token and its own classifier head.
    pub distill: bool,
}

impl VitConfig {
    /// Desk-scale "tiny" encoder at the default 224x224 / P=16 input.
    pub fn tiny() -> Self {
        VitConfig {
            patch: PatchEmbedConfig {
                image_h: 224,
                image_w: 224,
                patch_size: 16,
                channels: 3,
                embed_dim: 64,
            },
            encoder: EncoderConfig {
                depth: 4,
                heads: 4,
                embed_dim: 64,
                mlp_dim: 128,
                dropout: 0.1,
            },
            classes: 8,
            distill: false,
        }
    }

    pub fn with_image(mut self, h: usize, w: usize, patch: usize) -> Self {
        self.patch.image_h = h;
        self.patch.image_w = w;
        self.patch.patch_size = patch;
        self
    }

    pub fn with_distill(mut self, distill: bool) -> Self {
        self.distill = distill;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.patch.validate()?;
        self.encoder.validate()?;
        if self.patch.embed_dim != self.encoder.embed_dim {
            return Err(CoreError::config(format!(
                "patch embed dim {} disagrees with encoder dim {}",
                self.patch.embed_dim, self.encoder.embed_dim
            )));
        }
        if self.classes < 2 {
            return Err(CoreError::config("classifier needs at least 2 classes"));
        }
        Ok(())
    }

    /// Special-token count T: class token plus optional distillation token.
    pub fn token_count(&self) -> usize {
        1 + usize::from(self.distill)
    }

    /// Full sequence length N + T.
    pub fn seq_len(&self) -> usize {
        self.patch.num_patches() + self.token_count()
    }
}

/// Splits `[B,C,H,W]` into N non-overlapping P x P patches per image, each
/// flattened in `[C,P,P]` row-major order; patches run left-to-right,
/// top-to-bottom. Output `[B, N, P^2*C]`.
pub fn patchify<T: Scalar>(x: &Tensor<T>, cfg: &PatchEmbedConfig) -> Result<Tensor<T>> {
    cfg.validate()?;
    let dims = x.shape();
    if dims.len() != 4 || dims[1] != cfg.channels || dims[2] != cfg.image_h || dims[3] != cfg.image_w
    {
        return Err(CoreError::ShapeMismatch {
            op: "patchify",
            lhs: dims.to_vec(),
            rhs: vec![0, cfg.channels, cfg.image_h, cfg.image_w],
        });
    }
    let (b, c, h, w) = (dims[0], dims[1], dims[2], dims[3]);
    let p = cfg.patch_size;
    let (ph, pw) = (h / p, w / p);
    let n = ph * pw;
    let pd = cfg.patch_dim();
    let mut map = Vec::with_capacity(b * n * pd);
    for bi in 0..b {
        for py in 0..ph {
            for px in 0..pw {
                for ci in 0..c {
                    for iy in 0..p {
                        for ix in 0..p {
                            map.push(((bi * c + ci) * h + py * p + iy) * w + px * p + ix);
                        }
                    }
                }
            }
        }
    }
    Ok(gather_op(
        "patchify",
        x,
        vec![b, n, pd],
        std::rc::Rc::new(map),
    ))
}

/// Learned class token, optional distillation token, and positional
/// embeddings sized to the full token sequence.
pub struct TokenSet<T: Scalar> {
    pub class_token: Tensor<T>,
    pub distillation_token: Option<Tensor<T>>,
    pub positional: Tensor<T>,
}

impl<T: Scalar> TokenSet<T> {
    pub fn new(cfg: &VitConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.encoder.embed_dim;
        let seq = cfg.seq_len();
        TokenSet {
            class_token: crate::init::uniform_param(vec![1, 1, d], 0.02, rng),
            distillation_token: cfg
                .distill
                .then(|| crate::init::uniform_param(vec![1, 1, d], 0.02, rng)),
            positional: crate::init::uniform_param(vec![1, seq, d], 0.02, rng),
        }
    }

    pub fn named_parameters(&self, prefix: &str) -> Vec<(String, Tensor<T>)> {
        let mut out = vec![
            (format!("{prefix}.class_token"), self.class_token.clone()),
            (format!("{prefix}.positional"), self.positional.clone()),
        ];
        if let Some(t) = &self.distillation_token {
            out.push((format!("{prefix}.distillation_token"), t.clone()));
        }
        out
    }
}

/// Projects flattened patches to the embedding width, prepends the class
/// (and optional distillation) token, and adds positional embeddings.
/// `[B, N, P^2*C] -> [B, N+T, D]`.
pub fn embed<T: Scalar>(
    patches: &Tensor<T>,
    tokens: &TokenSet<T>,
    proj: &LinearLayer<T>,
) -> Result<Tensor<T>> {
    let dims = patches.shape();
    if dims.len() != 3 || dims[2] != proj.in_features() {
        return Err(CoreError::ShapeMismatch {
            op: "embed",
            lhs: dims.to_vec(),
            rhs: proj.weight.shape().to_vec(),
        });
    }
    let b = dims[0];
    let d = proj.out_features();
    let z = proj.forward(patches)?;
    let cls = tokens.class_token.broadcast_to(vec![b, 1, d])?;
    let seq = match &tokens.distillation_token {
        Some(dist) => {
            let dist = dist.broadcast_to(vec![b, 1, d])?;
            Tensor::concat(&[&cls, &dist, &z], 1)?
        }
        None => Tensor::concat(&[&cls, &z], 1)?,
    };
    if tokens.positional.shape() != [1, seq.shape()[1], d] {
        return Err(CoreError::ShapeMismatch {
            op: "embed positional",
            lhs: tokens.positional.shape().to_vec(),
            rhs: seq.shape().to_vec(),
        });
    }
    seq.add(&tokens.positional)
}

/// Scaled dot-product attention over `heads` heads followed by an output
/// projection. Per head: softmax(Q Kᵀ / sqrt(D/heads)) V.
pub struct MultiHeadAttention<T: Scalar> {
    pub wq: LinearLayer<T>,
    pub wk: LinearLayer<T>,
    pub wv: LinearLayer<T>,
    pub wo: LinearLayer<T>,
    pub heads: usize,
}

impl<T: Scalar> MultiHeadAttention<T> {
    pub fn new(dim: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(CoreError::config(format!(
                "attention dim {dim} not divisible by {heads} heads"
            )));
        }
        Ok(MultiHeadAttention {
            wq: LinearLayer::new(dim, dim, rng),
            wk: LinearLayer::new(dim, dim, rng),
            wv: LinearLayer::new(dim, dim, rng),
            wo: LinearLayer::new(dim, dim, rng),
            heads,
        })
    }

    /// Returns the attended output `[B,S,D]` and the attention weights
    /// `[B*heads, S, S]` (row-stochastic).
    pub fn forward_with_weights(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let dims = x.shape();
        if dims.len() != 3 {
            return Err(CoreError::config(format!(
                "attention expects [B,S,D], got {dims:?}"
            )));
        }
        let (b, s, d) = (dims[0], dims[1], dims[2]);
        let h = self.heads;
        let dh = d / h;

        let split = |t: Tensor<T>| -> Result<Tensor<T>> {
            // [B,S,D] -> [B,S,H,dh] -> [B,H,S,dh] -> [B*H,S,dh]
            t.reshape(vec![b, s, h, dh])?
                .transpose(1, 2)?
                .reshape(vec![b * h, s, dh])
        };
        let q = split(self.wq.forward(x)?)?;
        let k = split(self.wk.forward(x)?)?;
        let v = split(self.wv.forward(x)?)?;

        let scale = T::of_f64(1.0 / (dh as f64).sqrt());
        let scores = q.bmm(&k.transpose(1, 2)?)?.mul_scalar(scale);
        let attn = softmax(&scores);
        let ctx = attn.bmm(&v)?; // [B*H, S, dh]
        let merged = ctx
            .reshape(vec![b, h, s, dh])?
            .transpose(1, 2)?
            .reshape(vec![b, s, d])?;
        Ok((self.wo.forward(&merged)?, attn))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_with_weights(x)?.0)
    }

    pub fn named_parameters(&self, prefix: &str) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        out.extend(self.wq.named_parameters(&format!("{prefix}.wq")));
        out.extend(self.wk.named_parameters(&format!("{prefix}.wk")));
        out.extend(self.wv.named_parameters(&format!("{prefix}.wv")));
        out.extend(self.wo.named_parameters(&format!("{prefix}.wo")));
        out
    }
}

/// Pre-norm transformer encoder block:
/// `h = x + drop(attn(ln1(x)))`, `out = h + drop(mlp(ln2(h)))`.
pub struct EncoderBlock<T: Scalar> {
    pub norm1: LayerNorm<T>,
    pub attn: MultiHeadAttention<T>,
    pub norm2: LayerNorm<T>,
    pub fc1: LinearLayer<T>,
    pub fc2: LinearLayer<T>,
    pub dropout: DropoutLayer,
}

impl<T: Scalar> EncoderBlock<T> {
    pub fn new(cfg: &EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        Ok(EncoderBlock {
            norm1: LayerNorm::new(cfg.embed_dim),
            attn: MultiHeadAttention::new(cfg.embed_dim, cfg.heads, rng)?,
            norm2: LayerNorm::new(cfg.embed_dim),
            fc1: LinearLayer::new(cfg.embed_dim, cfg.mlp_dim, rng),
            fc2: LinearLayer::new(cfg.mlp_dim, cfg.embed_dim, rng),
            dropout: DropoutLayer::new(cfg.dropout)?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<Tensor<T>> {
        let attended = self.attn.forward(&self.norm1.forward(x)?)?;
        let h = x.add(&self.dropout.forward(&attended, ctx)?)?;
        let mlp = self.fc2.forward(&gelu(&self.fc1.forward(&self.norm2.forward(&h)?)?))?;
        h.add(&self.dropout.forward(&mlp, ctx)?)
    }

    pub fn named_parameters(&self, prefix: &str) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        out.extend(self.norm1.named_parameters(&format!("{prefix}.norm1")));
        out.extend(self.attn.named_parameters(&format!("{prefix}.attn")));
        out.extend(self.norm2.named_parameters(&format!("{prefix}.norm2")));
        out.extend(self.fc1.named_parameters(&format!("{prefix}.fc1")));
        out.extend(self.fc2.named_parameters(&format!("{prefix}.fc2")));
        out
    }
}

pub struct VitOutput<T: Scalar> {
    /// Class-token encoder output, the branch's feature vector `[B, D]`.
    pub features: Tensor<T>,
    /// Class-head logits `[B, K]`.
    pub logits: Tensor<T>,
    /// Distillation-head logits, present in the two-token variant.
    pub distill_logits: Option<Tensor<T>>,
    /// Mean of the two head softmaxes; the eval-time prediction for the
    /// two-token variant.
    pub combined: Option<Tensor<T>>,
    /// Feature vector offered to fusion: class feature, or the mean of the
    /// class and distillation features in the two-token variant.
    pub fusion_features: Tensor<T>,
}

pub struct VitModel<T: Scalar> {
    pub cfg: VitConfig,
    pub proj: LinearLayer<T>,
    pub tokens: TokenSet<T>,
    pub blocks: Vec<EncoderBlock<T>>,
    pub norm: LayerNorm<T>,
    pub head: LinearLayer<T>,
    pub distill_head: Option<LinearLayer<T>>,
    pub embed_dropout: DropoutLayer,
}

impl<T: Scalar> VitModel<T> {
    pub fn new(cfg: VitConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.encoder.embed_dim;
        let proj = LinearLayer::new(cfg.patch.patch_dim(), d, rng);
        let tokens = TokenSet::new(&cfg, rng);
        let blocks = (0..cfg.encoder.depth)
            .map(|_| EncoderBlock::new(&cfg.encoder, rng))
            .collect::<Result<Vec<_>>>()?;
        let norm = LayerNorm::new(d);
        let head = LinearLayer::new(d, cfg.classes, rng);
        let distill_head = if cfg.distill {
            Some(LinearLayer::new(d, cfg.classes, rng))
        } else {
            None
        };
        let embed_dropout = DropoutLayer::new(cfg.encoder.dropout)?;
        Ok(VitModel {
            cfg,
            proj,
            tokens,
            blocks,
            norm,
            head,
            distill_head,
            embed_dropout,
        })
    }

    pub fn feature_width(&self) -> usize {
        self.cfg.encoder.embed_dim
    }

    pub fn forward(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<VitOutput<T>> {
        let patches = patchify(x, &self.cfg.patch)?;
        let mut seq = embed(&patches, &self.tokens, &self.proj)?;
        seq = self.embed_dropout.forward(&seq, ctx)?;
        for block in &self.blocks {
            seq = block.forward(&seq, ctx)?;
        }
        let seq = self.norm.forward(&seq)?;

        let b = x.shape()[0];
        let d = self.cfg.encoder.embed_dim;
        let cls = seq.slice(1, 0, 1)?.reshape(vec![b, d])?;
        let logits = self.head.forward(&cls)?;

        if let (Some(distill_head), true) = (&self.distill_head, self.cfg.distill) {
            let dist = seq.slice(1, 1, 2)?.reshape(vec![b, d])?;
            let distill_logits = distill_head.forward(&dist)?;
            let combined = softmax(&logits)
                .add(&softmax(&distill_logits))?
                .mul_scalar(T::of_f64(0.5));
            let fusion = cls.add(&dist)?.mul_scalar(T::of_f64(0.5));
            Ok(VitOutput {
                features: cls,
                logits,
                distill_logits: Some(distill_logits),
                combined: Some(combined),
                fusion_features: fusion,
            })
        } else {
            Ok(VitOutput {
                fusion_features: cls.clone(),
                features: cls,
                logits,
                distill_logits: None,
                combined: None,
            })
        }
    }

    pub fn named_parameters(&self, prefix: &str) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        out.extend(self.proj.named_parameters(&format!("{prefix}.proj")));
        out.extend(self.tokens.named_parameters(&format!("{prefix}.tokens")));
        for (i, block) in self.blocks.iter().enumerate() {
            out.extend(block.named_parameters(&format!("{prefix}.blocks.{i}")));
        }
        out.extend(self.norm.named_parameters(&format!("{prefix}.norm")));
        out.extend(self.head.named_parameters(&format!("{prefix}.head")));
        if let Some(dh) = &self.distill_head {
            out.extend(dh.named_parameters(&format!("{prefix}.distill_head")));
        }
        out
    }
}

#[cfg(test)]
mod tests;
