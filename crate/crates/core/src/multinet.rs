//! CNN branch and fusion machinery: a VGG-style and a residual-style
//! backbone running in parallel and merged by channel concatenation, the
//! convolutional cascade (two wide convs, 2x2 max-pool, three narrower
//! convs) feeding an MLP head, a plain backbone classifier used for the
//! ResNet/EfficientNet-style comparators, and the generic feature-level
//! combiner that fuses any two branches into one joint classifier.
//!
//! Backbones are width/depth-configurable so desk-scale runs finish in
//! minutes; the full-size cascade widths (1024/768) are available through
//! [`MultiNetHeadConfig::paper_scale`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::layers::{
    adaptive_maxpool2d, maxpool2d, relu, softmax, Conv2dLayer, DropoutLayer, ForwardCtx,
    LinearLayer, Padding,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::vit::{VitModel, VitOutput};

// ---------------------------------------------------------------------------
// backbones

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackboneKind {
    /// Stacked 3x3 conv + ReLU stages, max-pool between stages.
    VggStyle,
    /// Identity-shortcut residual blocks: out = relu(F(x) + x).
    ResidualStyle,
    /// Inverted-bottleneck blocks: 1x1 expand, 3x3, 1x1 project.
    EfficientStyle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    /// Output channels per stage; each stage ends with a 2x2 max-pool, so the
    /// spatial extent halves per entry.
    pub stage_widths: Vec<usize>,
    /// Blocks (or conv layers) per stage.
    pub depth_multiplier: usize,
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage_widths.is_empty() || self.stage_widths.contains(&0) {
            return Err(CoreError::config("backbone needs nonzero stage widths"));
        }
        if self.depth_multiplier == 0 {
            return Err(CoreError::config("backbone depth multiplier must be >= 1"));
        }
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        *self.stage_widths.last().unwrap()
    }

    /// Spatial reduction factor: one 2x2 pool per stage.
    pub fn reduction(&self) -> usize {
        1 << self.stage_widths.len()
    }
}

/// Residual unit at constant width: `relu(conv2(relu(conv1(x))) + x)`.
pub struct ResidualBlock<T: Scalar> {
    pub conv1: Conv2dLayer<T>,
    pub conv2: Conv2dLayer<T>,
}

impl<T: Scalar> ResidualBlock<T> {
    pub fn new(width: usize, rng: &mut impl Rng) -> Self {
        ResidualBlock {
            conv1: Conv2dLayer::new(width, width, 3, 1, Padding::Same, rng),
            conv2: Conv2dLayer::new(width, width, 3, 1, Padding::Same, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let f = self.conv2.forward(&relu(&self.conv1.forward(x)?))?;
        Ok(relu(&f.add(x)?))
    }

    fn named_parameters(&self, prefix: &str) -> Vec<(String, Tensor<T>)> {
        let mut out = self.conv1.named_parameters(&format!("{prefix}.conv1"));
        out.extend(self.conv2.named_parameters(&format!("{prefix}.conv2")));
        out
    }
}

/// Inverted bottleneck: 1x1 expand (x4), 3x3, 1x1 project, with a residual
/// add when input and output widths agree.
pub struct BottleneckBlock<T: Scalar> {
    pub expand: Conv2dLayer<T>,
    pub mid: Conv2dLayer<T>,
    pub project: Conv2dLayer<T>,
}

impl<T: Scalar> BottleneckBlock<T> {
    const EXPANSION: usize = 4;

    pub fn new(in_width: usize, out_width: usize, rng: &mut impl Rng) -> Self {
        let hidden = in_width * Self::EXPANSION;
        BottleneckBlock {
            expand: Conv2dLayer::new(in_width, hidden, 1, 1, Padding::Same, rng),
            mid: Conv2dLayer::new(hidden, hidden, 3, 1, Padding::Same, rng),
            project: Conv2dLayer::new(hidden, out_width, 1, 1, Padding::Same, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = relu(&self.expand.forward(x)?);
        let h = relu(&self.mid.forward(&h)?);
        let out = self.project.forward(&h)?;
        if self.expand.in_channels() == self.project.out_channels() {
            out.add(x)
        } else {
            Ok(out)
        }
    }

    fn named_parameters(&self, prefix: &str) -> Vec<(String, Tensor<T>)> {
        let mut out = self.expand.named_parameters(&format!("{prefix}.expand"));
        out.extend(self.mid.named_parameters(&format!("{prefix}.mid")));
        out.extend(self.project.named_parameters(&format!("{prefix}.project")));
        out
    }
}

enum StageUnit<T: Scalar> {
    Conv(Conv2dLayer<T>),
    Residual(ResidualBlock<T>),
    Bottleneck(BottleneckBlock<T>),
}

impl<T: Scalar> StageUnit<T> {
    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            StageUnit::Conv(c) => Ok(relu(&c.forward(x)?)),
            StageUnit::Residual(b) => b.forward(x),
            StageUnit::Bottleneck(b) => b.forward(x),
        }
    }

    fn named_parameters(&self, prefix: &str) -> Vec<(String, Tensor<T>)> {
        match self {
            StageUnit::Conv(c) => c.named_parameters(prefix),
            StageUnit::Residual(b) => b.named_parameters(prefix),
            StageUnit::Bottleneck(b) => b.named_parameters(prefix),
        }
    }
}

pub struct Backbone<T: Scalar> {
    pub cfg: BackboneConfig,
    stem: Option<Conv2dLayer<T>>,
    stages: Vec<Vec<StageUnit<T>>>,
}

impl<T: Scalar> Backbone<T> {
    pub fn new(cfg: BackboneConfig, in_channels: usize, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let mut stages = Vec::new();
        let mut stem = None;
        let mut current = in_channels;
        match cfg.kind {
            BackboneKind::VggStyle => {
                for &w in &cfg.stage_widths {
                    let mut units = Vec::new();
                    for _ in 0..cfg.depth_multiplier {
                        units.push(StageUnit::Conv(Conv2dLayer::new(
                            current,
                            w,
                            3,
                            1,
                            Padding::Same,
                            rng,
                        )));
                        current = w;
                    }
                    stages.push(units);
                }
            }
            BackboneKind::ResidualStyle => {
                let w0 = cfg.stage_widths[0];
                stem = Some(Conv2dLayer::new(current, w0, 3, 1, Padding::Same, rng));
                current = w0;
                for &w in &cfg.stage_widths {
                    let mut units = Vec::new();
                    if current != w {
                        units.push(StageUnit::Conv(Conv2dLayer::new(
                            current,
                            w,
                            1,
                            1,
                            Padding::Same,
                            rng,
                        )));
                        current = w;
                    }
                    for _ in 0..cfg.depth_multiplier {
                        units.push(StageUnit::Residual(ResidualBlock::new(w, rng)));
                    }
                    stages.push(units);
                }
            }
            BackboneKind::EfficientStyle => {
                let w0 = cfg.stage_widths[0];
                stem = Some(Conv2dLayer::new(current, w0, 3, 1, Padding::Same, rng));
                current = w0;
                for &w in &cfg.stage_widths {
                    let mut units = Vec::new();
                    for _ in 0..cfg.depth_multiplier {
                        units.push(StageUnit::Bottleneck(BottleneckBlock::new(current, w, rng)));
                        current = w;
                    }
                    stages.push(units);
                }
            }
        }
        Ok(Backbone { cfg, stem, stages })
    }

    /// `[B,C,H,W] -> [B,C',H/2^s,W/2^s]` feature map.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = match &self.stem {
            Some(stem) => relu(&stem.forward(x)?),
            None => x.clone(),
        };
        for units in &self.stages {
            for unit in units {
                h = unit.forward(&h)?;
            }
            h = maxpool2d(&h, 2, 2)?;
        }
        Ok(h)
    }

    pub fn named_parameters(&self, prefix: &str) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        if let Some(stem) = &self.stem {
            out.extend(stem.named_parameters(&format!("{prefix}.stem")));
        }
        for (si, units) in self.stages.iter().enumerate() {
            for (ui, unit) in units.iter().enumerate() {
                out.extend(unit.named_parameters(&format!("{prefix}.stages.{si}.{ui}")));
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// merge

/// Channel-axis concatenation of two feature maps with equal batch and
/// spatial extents: `[B,Ca,H,W] + [B,Cb,H,W] -> [B,Ca+Cb,H,W]`.
pub fn merge_parallel<T: Scalar>(fa: &Tensor<T>, fb: &Tensor<T>) -> Result<Tensor<T>> {
    let (a, b) = (fa.shape(), fb.shape());
    if a.len() != 4 || b.len() != 4 || a[0] != b[0] || a[2] != b[2] || a[3] != b[3] {
        return Err(CoreError::ShapeMismatch {
            op: "merge_parallel",
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        });
    }
    fa.concat_with(fb, 1)
}

// ---------------------------------------------------------------------------
// head

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiNetHeadConfig {
    /// Width of the first two cascade convs (1x1 then 3x3).
    pub cascade_width_a: usize,
    /// Width of the last three cascade convs (1x1, 3x3, 3x3).
    pub cascade_width_b: usize,
    /// Hidden widths of the two dropout-wrapped MLP layers.
    pub mlp_hidden: [usize; 2],
    /// Width of the penultimate feature layer.
    pub feature_width: usize,
    pub classes: usize,
    pub dropout: f64,
}

impl MultiNetHeadConfig {
    /// Desk-scale widths; trains in minutes on a CPU.
    pub fn reduced() -> Self {
        MultiNetHeadConfig {
            cascade_width_a: 64,
            cascade_width_b: 48,
            mlp_hidden: [128, 128],
            feature_width: 1024,
            classes: 8,
            dropout: 0.1,
        }
    }

    /// Full-size cascade: two 1024-filter convs, then three 768-filter convs,
    /// with a 1024-unit feature layer ahead of the 8-way output.
    pub fn paper_scale() -> Self {
        MultiNetHeadConfig {
            cascade_width_a: 1024,
            cascade_width_b: 768,
            mlp_hidden: [1024, 1024],
            feature_width: 1024,
            classes: 8,
            dropout: 0.1,
        }
    }
}

pub struct MultiNetHeadOutput<T: Scalar> {
    /// Penultimate activation `[B, feature_width]`.
    pub features: Tensor<T>,
    /// `[B, classes]`, pre-softmax.
    pub logits: Tensor<T>,
}

/// Conv cascade and MLP head. Cascade: 1x1 then 3x3 at `cascade_width_a`,
/// 2x2 max-pool, then 1x1, 3x3, 3x3 at `cascade_width_b`; all stride 1, same
/// padding, ReLU. MLP: two dropout-wrapped hidden layers, a feature layer,
/// and the class output. Softmax is applied only inside the loss and at
/// prediction time.
pub struct MultiNetHead<T: Scalar> {
    pub cfg: MultiNetHeadConfig,
    pub conv1: Conv2dLayer<T>,
    pub conv2: Conv2dLayer<T>,
    pub conv3: Conv2dLayer<T>,
    pub conv4: Conv2dLayer<T>,
    pub conv5: Conv2dLayer<T>,
    pub lin1: LinearLayer<T>,
    pub lin2: LinearLayer<T>,
    pub lin3: LinearLayer<T>,
    pub out: LinearLayer<T>,
    pub dropout: DropoutLayer,
    in_spatial: (usize, usize),
}

impl<T: Scalar> MultiNetHead<T> {
    pub fn new(
        in_channels: usize,
        in_h: usize,
        in_w: usize,
        cfg: MultiNetHeadConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if in_h < 2 || in_w < 2 {
            return Err(CoreError::config(format!(
                "head input {in_h}x{in_w} too small for the 2x2 max-pool"
            )));
        }
        let (wa, wb) = (cfg.cascade_width_a, cfg.cascade_width_b);
        let (ph, pw) = ((in_h - 2) / 2 + 1, (in_w - 2) / 2 + 1);
        let flat = wb * ph * pw;
        Ok(MultiNetHead {
            conv1: Conv2dLayer::new(in_channels, wa, 1, 1, Padding::Same, rng),
            conv2: Conv2dLayer::new(wa, wa, 3, 1, Padding::Same, rng),
            conv3: Conv2dLayer::new(wa, wb, 1, 1, Padding::Same, rng),
            conv4: Conv2dLayer::new(wb, wb, 3, 1, Padding::Same, rng),
            conv5: Conv2dLayer::new(wb, wb, 3, 1, Padding::Same, rng),
            lin1: LinearLayer::new(flat, cfg.mlp_hidden[0], rng),
            lin2: LinearLayer::new(cfg.mlp_hidden[0], cfg.mlp_hidden[1], rng),
            lin3: LinearLayer::new(cfg.mlp_hidden[1], cfg.feature_width, rng),
            out: LinearLayer::new(cfg.feature_width, cfg.classes, rng),
            dropout: DropoutLayer::new(cfg.dropout)?,
            in_spatial: (in_h, in_w),
            cfg,
        })
    }

    pub fn forward(&self, f: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<MultiNetHeadOutput<T>> {
        let dims = f.shape();
        if dims.len() != 4 || (dims[2], dims[3]) != self.in_spatial {
            return Err(CoreError::ShapeMismatch {
                op: "multinet_head",
                lhs: dims.to_vec(),
                rhs: vec![0, self.conv1.in_channels(), self.in_spatial.0, self.in_spatial.1],
            });
        }
        let b = dims[0];
        let h = relu(&self.conv1.forward(f)?);
        let h = relu(&self.conv2.forward(&h)?);
        let h = maxpool2d(&h, 2, 2)?;
        let h = relu(&self.conv3.forward(&h)?);
        let h = relu(&self.conv4.forward(&h)?);
        let h = relu(&self.conv5.forward(&h)?);
        let flat = h.reshape(vec![b, h.numel() / b])?;
        let h = self.dropout.forward(&relu(&self.lin1.forward(&flat)?), ctx)?;
        let h = self.dropout.forward(&relu(&self.lin2.forward(&h)?), ctx)?;
        let features = relu(&self.lin3.forward(&h)?);
        let logits = self.out.forward(&features)?;
        Ok(MultiNetHeadOutput { features, logits })
    }

    pub fn named_parameters(&self, prefix: &str) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        out.extend(self.conv1.named_parameters(&format!("{prefix}.conv1")));
        out.extend(self.conv2.named_parameters(&format!("{prefix}.conv2")));
        out.extend(self.conv3.named_parameters(&format!("{prefix}.conv3")));
        out.extend(self.conv4.named_parameters(&format!("{prefix}.conv4")));
        out.extend(self.conv5.named_parameters(&format!("{prefix}.conv5")));
        out.extend(self.lin1.named_parameters(&format!("{prefix}.lin1")));
        out.extend(self.lin2.named_parameters(&format!("{prefix}.lin2")));
        out.extend(self.lin3.named_parameters(&format!("{prefix}.lin3")));
        out.extend(self.out.named_parameters(&format!("{prefix}.out")));
        out
    }
}

// ---------------------------------------------------------------------------
// the CNN branch and the plain backbone classifier

pub struct BranchOutput<T: Scalar> {
    /// Feature vector offered to fusion, `[B, feature_width]`.
    pub features: Tensor<T>,
    /// The branch's own classifier logits `[B, K]`.
    pub logits: Tensor<T>,
    /// Present only for the two-token transformer variant.
    pub distill_logits: Option<Tensor<T>>,
    /// Eval-time combined prediction of the two-token variant (softmax mean).
    pub combined: Option<Tensor<T>>,
}

impl<T: Scalar> From<VitOutput<T>> for BranchOutput<T> {
    fn from(out: VitOutput<T>) -> Self {
        BranchOutput {
            features: out.fusion_features,
            logits: out.logits,
            distill_logits: out.distill_logits,
            combined: out.combined,
        }
    }
}

/// Parallel VGG-style and residual-style backbones merged C-Net-style by
/// channel concatenation, followed by the conv cascade and MLP head.
pub struct MultiNetModel<T: Scalar> {
    pub backbone_a: Backbone<T>,
    pub backbone_b: Backbone<T>,
    pub head: MultiNetHead<T>,
}

impl<T: Scalar> MultiNetModel<T> {
    pub fn new(
        input: (usize, usize, usize),
        vgg: BackboneConfig,
        residual: BackboneConfig,
        head_cfg: MultiNetHeadConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let (c, h, w) = input;
        let backbone_a = Backbone::new(vgg, c, rng)?;
        let backbone_b = Backbone::new(residual, c, rng)?;
        let ra = backbone_a.cfg.reduction();
        let rb = backbone_b.cfg.reduction();
        let (ha, wa) = (h / ra, w / ra);
        let (hb, wb) = (h / rb, w / rb);
        // merge point runs at the smaller extent; the larger map is
        // adaptively pooled down when the backbones disagree
        let (mh, mw) = (ha.min(hb), wa.min(wb));
        if mh == 0 || mw == 0 {
            return Err(CoreError::config(format!(
                "input {h}x{w} too small for backbone reductions {ra}/{rb}"
            )));
        }
        let merged_channels = backbone_a.cfg.out_channels() + backbone_b.cfg.out_channels();
        let head = MultiNetHead::new(merged_channels, mh, mw, head_cfg, rng)?;
        Ok(MultiNetModel {
            backbone_a,
            backbone_b,
            head,
        })
    }

    pub fn feature_width(&self) -> usize {
        self.head.cfg.feature_width
    }

    pub fn forward(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<BranchOutput<T>> {
        let fa = self.backbone_a.forward(x)?;
        let fb = self.backbone_b.forward(x)?;
        let (fa, fb) = equalize_extents(fa, fb)?;
        let merged = merge_parallel(&fa, &fb)?;
        let out = self.head.forward(&merged, ctx)?;
        Ok(BranchOutput {
            features: out.features,
            logits: out.logits,
            distill_logits: None,
            combined: None,
        })
    }

    pub fn named_parameters(&self, prefix: &str) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        out.extend(
            self.backbone_a
                .named_parameters(&format!("{prefix}.backbone_a")),
        );
        out.extend(
            self.backbone_b
                .named_parameters(&format!("{prefix}.backbone_b")),
        );
        out.extend(self.head.named_parameters(&format!("{prefix}.head")));
        out
    }
}

/// Adaptively max-pools the larger feature map down to the smaller extent so
/// channel merging sees matched spatial resolution.
fn equalize_extents<T: Scalar>(
    fa: Tensor<T>,
    fb: Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (sa, sb) = (fa.shape().to_vec(), fb.shape().to_vec());
    if (sa[2], sa[3]) == (sb[2], sb[3]) {
        return Ok((fa, fb));
    }
    let (th, tw) = (sa[2].min(sb[2]), sa[3].min(sb[3]));
    let fa = if (sa[2], sa[3]) != (th, tw) {
        adaptive_maxpool2d(&fa, th, tw)?
    } else {
        fa
    };
    let fb = if (sb[2], sb[3]) != (th, tw) {
        adaptive_maxpool2d(&fb, th, tw)?
    } else {
        fb
    };
    Ok((fa, fb))
}

/// Single backbone with a flatten + linear feature layer and its own
/// classifier; stands in for the off-the-shelf ResNet/EfficientNet
/// comparators at reduced scale.
pub struct BackboneNet<T: Scalar> {
    pub backbone: Backbone<T>,
    pub fc: LinearLayer<T>,
    pub head: LinearLayer<T>,
}

impl<T: Scalar> BackboneNet<T> {
    pub fn new(
        input: (usize, usize, usize),
        cfg: BackboneConfig,
        feature_width: usize,
        classes: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let (c, h, w) = input;
        let backbone = Backbone::new(cfg, c, rng)?;
        let r = backbone.cfg.reduction();
        if h / r == 0 || w / r == 0 {
            return Err(CoreError::config(format!(
                "input {h}x{w} too small for backbone reduction {r}"
            )));
        }
        let flat = backbone.cfg.out_channels() * (h / r) * (w / r);
        Ok(BackboneNet {
            backbone,
            fc: LinearLayer::new(flat, feature_width, rng),
            head: LinearLayer::new(feature_width, classes, rng),
        })
    }

    pub fn feature_width(&self) -> usize {
        self.fc.out_features()
    }

    pub fn forward(&self, x: &Tensor<T>, _ctx: &mut ForwardCtx) -> Result<BranchOutput<T>> {
        let fm = self.backbone.forward(x)?;
        let b = fm.shape()[0];
        let flat = fm.reshape(vec![b, fm.numel() / b])?;
        let features = relu(&self.fc.forward(&flat)?);
        let logits = self.head.forward(&features)?;
        Ok(BranchOutput {
            features,
            logits,
            distill_logits: None,
            combined: None,
        })
    }

    pub fn named_parameters(&self, prefix: &str) -> Vec<(String, Tensor<T>)> {
        let mut out = self
            .backbone
            .named_parameters(&format!("{prefix}.backbone"));
        out.extend(self.fc.named_parameters(&format!("{prefix}.fc")));
        out.extend(self.head.named_parameters(&format!("{prefix}.head")));
        out
    }
}

// ---------------------------------------------------------------------------
// branches and fusion

/// One standalone model family; everything a fused pairing can name.
pub enum Branch<T: Scalar> {
    Vit(VitModel<T>),
    Deit(VitModel<T>),
    MultiNet(MultiNetModel<T>),
    Residual(BackboneNet<T>),
    Efficient(BackboneNet<T>),
}

impl<T: Scalar> Branch<T> {
    pub fn feature_width(&self) -> usize {
        match self {
            Branch::Vit(m) | Branch::Deit(m) => m.feature_width(),
            Branch::MultiNet(m) => m.feature_width(),
            Branch::Residual(m) | Branch::Efficient(m) => m.feature_width(),
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            Branch::Vit(m) | Branch::Deit(m) => m.cfg.classes,
            Branch::MultiNet(m) => m.head.cfg.classes,
            Branch::Residual(m) | Branch::Efficient(m) => m.head.out_features(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Branch::Vit(_) => "vit",
            Branch::Deit(_) => "deit",
            Branch::MultiNet(_) => "multinet",
            Branch::Residual(_) => "resnet-style",
            Branch::Efficient(_) => "efficient-style",
        }
    }

    pub fn forward(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<BranchOutput<T>> {
        match self {
            Branch::Vit(m) | Branch::Deit(m) => Ok(m.forward(x, ctx)?.into()),
            Branch::MultiNet(m) => m.forward(x, ctx),
            Branch::Residual(m) | Branch::Efficient(m) => m.forward(x, ctx),
        }
    }

    pub fn named_parameters(&self) -> Vec<(String, Tensor<T>)> {
        let prefix = self.kind_name().replace('-', "_");
        match self {
            Branch::Vit(m) | Branch::Deit(m) => m.named_parameters(&prefix),
            Branch::MultiNet(m) => m.named_parameters(&prefix),
            Branch::Residual(m) | Branch::Efficient(m) => m.named_parameters(&prefix),
        }
    }
}

/// Feature-level fusion: the two branch feature vectors are concatenated and
/// a single linear classifier maps the joint vector to class logits.
pub struct FusedModel<T: Scalar> {
    pub branch_a: Branch<T>,
    pub branch_b: Branch<T>,
    pub classifier: LinearLayer<T>,
}

impl<T: Scalar> FusedModel<T> {
    pub fn new(branch_a: Branch<T>, branch_b: Branch<T>, rng: &mut impl Rng) -> Result<Self> {
        if branch_a.classes() != branch_b.classes() {
            return Err(CoreError::config(format!(
                "fused branches disagree on class count: {} vs {}",
                branch_a.classes(),
                branch_b.classes()
            )));
        }
        let width = branch_a.feature_width() + branch_b.feature_width();
        let classifier = LinearLayer::new(width, branch_a.classes(), rng);
        Ok(FusedModel {
            branch_a,
            branch_b,
            classifier,
        })
    }

    /// Joint classifier input width.
    pub fn fusion_width(&self) -> usize {
        self.classifier.in_features()
    }

    pub fn forward(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<Tensor<T>> {
        let fa = self.branch_a.forward(x, ctx)?;
        let fb = self.branch_b.forward(x, ctx)?;
        let joint = fa.features.concat_with(&fb.features, 1)?;
        self.classifier.forward(&joint)
    }

    /// Prediction probabilities (softmax over fused logits).
    pub fn predict(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<Tensor<T>> {
        Ok(softmax(&self.forward(x, ctx)?))
    }

    pub fn named_parameters(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = self.branch_a.named_parameters();
        out.extend(self.branch_b.named_parameters());
        out.extend(self.classifier.named_parameters("fusion.classifier"));
        out
    }
}
