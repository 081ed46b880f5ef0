//! Model selection: the five standalone families, the `a+b` fused pairings,
//! and the seeded builder that turns a pairing plus hyperparameters into a
//! runnable model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::layers::ForwardCtx;
use crate::multinet::{
    Backbone, BackboneConfig, BackboneKind, BackboneNet, Branch, BranchOutput, FusedModel,
    MultiNetHeadConfig, MultiNetModel,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::vit::{VitConfig, VitModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Vit,
    Deit,
    MultiNet,
    ResnetStyle,
    EfficientStyle,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vit" => Ok(ModelKind::Vit),
            "deit" => Ok(ModelKind::Deit),
            "multinet" => Ok(ModelKind::MultiNet),
            "resnet-style" | "resnet" => Ok(ModelKind::ResnetStyle),
            "efficient-style" | "efficientnet" | "efficient" => Ok(ModelKind::EfficientStyle),
            other => Err(CoreError::config(format!("unknown model kind: {other}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Vit => "vit",
            ModelKind::Deit => "deit",
            ModelKind::MultiNet => "multinet",
            ModelKind::ResnetStyle => "resnet-style",
            ModelKind::EfficientStyle => "efficient-style",
        }
    }
}

/// A runnable model choice: one family, or two fused with `+`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairingSpec {
    Single(ModelKind),
    Fused(ModelKind, ModelKind),
}

impl PairingSpec {
    pub fn parse(s: &str) -> Result<Self> {
        match s.split_once('+') {
            Some((a, b)) => {
                let (ka, kb) = (ModelKind::parse(a)?, ModelKind::parse(b)?);
                if ka == kb {
                    return Err(CoreError::config(format!(
                        "fused pairing must name two distinct branches, got {}+{}",
                        ka.name(),
                        kb.name()
                    )));
                }
                Ok(PairingSpec::Fused(ka, kb))
            }
            None => Ok(PairingSpec::Single(ModelKind::parse(s)?)),
        }
    }

    pub fn name(&self) -> String {
        match self {
            PairingSpec::Single(k) => k.name().to_string(),
            PairingSpec::Fused(a, b) => format!("{}+{}", a.name(), b.name()),
        }
    }

    /// The six fused pairings evaluated alongside the transformer ensemble.
    pub fn standard_pairings() -> Vec<PairingSpec> {
        use ModelKind::*;
        vec![
            PairingSpec::Fused(Vit, MultiNet),
            PairingSpec::Fused(Vit, ResnetStyle),
            PairingSpec::Fused(Vit, EfficientStyle),
            PairingSpec::Fused(Deit, MultiNet),
            PairingSpec::Fused(Deit, ResnetStyle),
            PairingSpec::Fused(Deit, EfficientStyle),
            PairingSpec::Fused(Vit, Deit),
        ]
    }
}

impl std::fmt::Display for PairingSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.name())
    }
}

/// Architecture hyperparameters shared by every family; serialized into
/// checkpoints and echoed into run configs. Defaults are the desk-scale
/// reduced setting (64x64 inputs, tiny encoder, narrow cascade).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHyper {
    pub resolution: usize,
    pub channels: usize,
    pub classes: usize,
    pub patch_size: usize,
    pub vit_dim: usize,
    pub vit_depth: usize,
    pub vit_heads: usize,
    pub vit_mlp: usize,
    pub dropout: f64,
    pub vgg_widths: Vec<usize>,
    pub residual_widths: Vec<usize>,
    pub efficient_widths: Vec<usize>,
    pub depth_multiplier: usize,
    pub cascade_width_a: usize,
    pub cascade_width_b: usize,
    pub mlp_hidden: [usize; 2],
    pub feature_width: usize,
    pub backbone_feature_width: usize,
}

impl Default for ModelHyper {
    fn default() -> Self {
        ModelHyper {
            resolution: 64,
            channels: 3,
            classes: 8,
            patch_size: 16,
            vit_dim: 64,
            vit_depth: 4,
            vit_heads: 4,
            vit_mlp: 128,
            dropout: 0.1,
            vgg_widths: vec![8, 16],
            residual_widths: vec![8, 16],
            efficient_widths: vec![8, 16],
            depth_multiplier: 1,
            cascade_width_a: 64,
            cascade_width_b: 48,
            mlp_hidden: [128, 128],
            feature_width: 1024,
            backbone_feature_width: 128,
        }
    }
}

impl ModelHyper {
    /// Micro setting for f64 finite-difference sweeps: every width shrunk so
    /// a full forward costs well under a millisecond.
    pub fn gradcheck_micro() -> Self {
        ModelHyper {
            resolution: 8,
            channels: 3,
            classes: 3,
            patch_size: 4,
            vit_dim: 8,
            vit_depth: 1,
            vit_heads: 2,
            vit_mlp: 16,
            dropout: 0.0,
            vgg_widths: vec![3],
            residual_widths: vec![3],
            efficient_widths: vec![3],
            depth_multiplier: 1,
            cascade_width_a: 4,
            cascade_width_b: 3,
            mlp_hidden: [6, 6],
            feature_width: 6,
            backbone_feature_width: 6,
        }
    }

    pub fn vit_config(&self, distill: bool) -> VitConfig {
        VitConfig {
            patch: crate::vit::PatchEmbedConfig {
                image_h: self.resolution,
                image_w: self.resolution,
                patch_size: self.patch_size,
                channels: self.channels,
                embed_dim: self.vit_dim,
            },
            encoder: crate::vit::EncoderConfig {
                depth: self.vit_depth,
                heads: self.vit_heads,
                embed_dim: self.vit_dim,
                mlp_dim: self.vit_mlp,
                dropout: self.dropout,
            },
            classes: self.classes,
            distill,
        }
    }

    pub fn head_config(&self) -> MultiNetHeadConfig {
        MultiNetHeadConfig {
            cascade_width_a: self.cascade_width_a,
            cascade_width_b: self.cascade_width_b,
            mlp_hidden: self.mlp_hidden,
            feature_width: self.feature_width,
            classes: self.classes,
            dropout: self.dropout,
        }
    }

    fn backbone(&self, kind: BackboneKind) -> BackboneConfig {
        let widths = match kind {
            BackboneKind::VggStyle => &self.vgg_widths,
            BackboneKind::ResidualStyle => &self.residual_widths,
            BackboneKind::EfficientStyle => &self.efficient_widths,
        };
        BackboneConfig {
            kind,
            stage_widths: widths.clone(),
            depth_multiplier: self.depth_multiplier,
        }
    }

    fn input(&self) -> (usize, usize, usize) {
        (self.channels, self.resolution, self.resolution)
    }
}

pub enum Model<T: Scalar> {
    Single(Branch<T>),
    Fused(FusedModel<T>),
}

/// What a forward pass yields for training and evaluation.
pub struct ModelOutput<T: Scalar> {
    /// Logits used for the primary loss and for predictions.
    pub logits: Tensor<T>,
    /// Distillation-head logits when the model is a standalone two-token
    /// transformer.
    pub distill_logits: Option<Tensor<T>>,
    /// Eval-time prediction probabilities when they differ from
    /// softmax(logits) (the two-token variant averages its two heads).
    pub combined: Option<Tensor<T>>,
}

impl<T: Scalar> Model<T> {
    pub fn pairing(&self) -> PairingSpec {
        match self {
            Model::Single(b) => PairingSpec::Single(kind_of(b)),
            Model::Fused(f) => PairingSpec::Fused(kind_of(&f.branch_a), kind_of(&f.branch_b)),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<ModelOutput<T>> {
        match self {
            Model::Single(branch) => {
                let BranchOutput {
                    logits,
                    distill_logits,
                    combined,
                    ..
                } = branch.forward(x, ctx)?;
                Ok(ModelOutput {
                    logits,
                    distill_logits,
                    combined,
                })
            }
            Model::Fused(fused) => Ok(ModelOutput {
                logits: fused.forward(x, ctx)?,
                distill_logits: None,
                combined: None,
            }),
        }
    }

    pub fn named_parameters(&self) -> Vec<(String, Tensor<T>)> {
        match self {
            Model::Single(b) => b.named_parameters(),
            Model::Fused(f) => f.named_parameters(),
        }
    }
}

fn kind_of<T: Scalar>(branch: &Branch<T>) -> ModelKind {
    match branch {
        Branch::Vit(_) => ModelKind::Vit,
        Branch::Deit(_) => ModelKind::Deit,
        Branch::MultiNet(_) => ModelKind::MultiNet,
        Branch::Residual(_) => ModelKind::ResnetStyle,
        Branch::Efficient(_) => ModelKind::EfficientStyle,
    }
}

pub fn build_branch<T: Scalar>(
    kind: ModelKind,
    hyper: &ModelHyper,
    rng: &mut ChaCha8Rng,
) -> Result<Branch<T>> {
    Ok(match kind {
        ModelKind::Vit => Branch::Vit(VitModel::new(hyper.vit_config(false), rng)?),
        ModelKind::Deit => Branch::Deit(VitModel::new(hyper.vit_config(true), rng)?),
        ModelKind::MultiNet => Branch::MultiNet(MultiNetModel::new(
            hyper.input(),
            hyper.backbone(BackboneKind::VggStyle),
            hyper.backbone(BackboneKind::ResidualStyle),
            hyper.head_config(),
            rng,
        )?),
        ModelKind::ResnetStyle => Branch::Residual(BackboneNet::new(
            hyper.input(),
            hyper.backbone(BackboneKind::ResidualStyle),
            hyper.backbone_feature_width,
            hyper.classes,
            rng,
        )?),
        ModelKind::EfficientStyle => Branch::Efficient(BackboneNet::new(
            hyper.input(),
            hyper.backbone(BackboneKind::EfficientStyle),
            hyper.backbone_feature_width,
            hyper.classes,
            rng,
        )?),
    })
}

/// Builds the requested pairing with weights drawn from a ChaCha stream
/// seeded by `seed`; construction is a pure function of (pairing, hyper,
/// seed).
pub fn build_model<T: Scalar>(
    pairing: PairingSpec,
    hyper: &ModelHyper,
    seed: u64,
) -> Result<Model<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match pairing {
        PairingSpec::Single(kind) => Ok(Model::Single(build_branch(kind, hyper, &mut rng)?)),
        PairingSpec::Fused(ka, kb) => {
            let a = build_branch(ka, hyper, &mut rng)?;
            let b = build_branch(kb, hyper, &mut rng)?;
            Ok(Model::Fused(FusedModel::new(a, b, &mut rng)?))
        }
    }
}

/// Standalone backbone forward, exposed for gradient checking.
pub fn backbone_only<T: Scalar>(
    kind: BackboneKind,
    hyper: &ModelHyper,
    rng: &mut ChaCha8Rng,
) -> Result<Backbone<T>> {
    Backbone::new(hyper.backbone(kind), hyper.channels, rng)
}
