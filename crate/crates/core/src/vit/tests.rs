use super::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn micro_cfg(distill: bool) -> VitConfig {
    VitConfig {
        patch: PatchEmbedConfig {
            image_h: 8,
            image_w: 8,
            patch_size: 4,
            channels: 3,
            embed_dim: 8,
        },
        encoder: EncoderConfig {
            depth: 1,
            heads: 2,
            embed_dim: 8,
            mlp_dim: 16,
            dropout: 0.0,
        },
        classes: 8,
        distill,
    }
}

#[test]
fn patch_count_matches_formula() {
    let cfg = PatchEmbedConfig {
        image_h: 224,
        image_w: 224,
        patch_size: 16,
        channels: 3,
        embed_dim: 64,
    };
    assert_eq!(cfg.num_patches(), 196);
}

#[test]
fn degenerate_single_patch_is_whole_image() {
    let cfg = PatchEmbedConfig {
        image_h: 16,
        image_w: 16,
        patch_size: 16,
        channels: 1,
        embed_dim: 8,
    };
    assert_eq!(cfg.num_patches(), 1);
    let mut r = rng(0);
    let x = Tensor::<f64>::rand_uniform(vec![1, 1, 16, 16], 0.0, 1.0, &mut r);
    let p = patchify(&x, &cfg).unwrap();
    assert_eq!(p.shape(), &[1, 1, 256]);
    assert_eq!(p.to_vec(), x.to_vec());
}

#[test]
fn indivisible_dimensions_rejected_with_named_values() {
    let cfg = PatchEmbedConfig {
        image_h: 224,
        image_w: 220,
        patch_size: 16,
        channels: 3,
        embed_dim: 64,
    };
    let err = cfg.validate().unwrap_err().to_string();
    assert!(err.contains("16") && err.contains("224") && err.contains("220"));
}

#[test]
fn patchify_raster_order_is_left_to_right_top_to_bottom() {
    // 4x4 single-channel image, P=2: patch 1 must be the top-right block
    let data: Vec<f64> = (0..16).map(|v| v as f64).collect();
    let x = Tensor::from_vec(vec![1, 1, 4, 4], data).unwrap();
    let cfg = PatchEmbedConfig {
        image_h: 4,
        image_w: 4,
        patch_size: 2,
        channels: 1,
        embed_dim: 4,
    };
    let p = patchify(&x, &cfg).unwrap();
    assert_eq!(p.shape(), &[1, 4, 4]);
    let v = p.to_vec();
    assert_eq!(&v[0..4], &[0.0, 1.0, 4.0, 5.0]); // top-left
    assert_eq!(&v[4..8], &[2.0, 3.0, 6.0, 7.0]); // top-right
    assert_eq!(&v[8..12], &[8.0, 9.0, 12.0, 13.0]); // bottom-left
}

#[test]
fn embed_zero_everything_gives_zero_output() {
    let cfg = micro_cfg(false);
    let mut r = rng(1);
    let mut model = VitModel::<f64>::new(cfg.clone(), &mut r).unwrap();
    for (_, p) in model.named_parameters("m") {
        for v in p.data_mut().iter_mut() {
            *v = 0.0;
        }
    }
    let x = Tensor::<f64>::zeros(vec![2, 3, 8, 8]);
    let patches = patchify(&x, &cfg.patch).unwrap();
    let seq = embed(&patches, &model.tokens, &model.proj).unwrap();
    assert!(seq.to_vec().iter().all(|&v| v == 0.0));
    let _ = &mut model;
}

#[test]
fn embed_sequence_length_is_patches_plus_tokens() {
    for distill in [false, true] {
        let cfg = micro_cfg(distill);
        let mut r = rng(2);
        let model = VitModel::<f64>::new(cfg.clone(), &mut r).unwrap();
        let x = Tensor::<f64>::zeros(vec![3, 3, 8, 8]);
        let patches = patchify(&x, &cfg.patch).unwrap();
        let seq = embed(&patches, &model.tokens, &model.proj).unwrap();
        let t = if distill { 2 } else { 1 };
        assert_eq!(seq.shape(), &[3, cfg.patch.num_patches() + t, 8]);
    }
}

#[test]
fn single_token_attention_weight_is_one() {
    let mut r = rng(3);
    let attn = MultiHeadAttention::<f64>::new(8, 2, &mut r).unwrap();
    let x = Tensor::rand_uniform(vec![1, 1, 8], -1.0, 1.0, &mut r);
    let (_, weights) = attn.forward_with_weights(&x).unwrap();
    assert_eq!(weights.shape(), &[2, 1, 1]);
    for v in weights.to_vec() {
        assert!((v - 1.0).abs() < 1e-12);
    }
}

#[test]
fn equal_tokens_attend_uniformly() {
    let mut r = rng(4);
    let attn = MultiHeadAttention::<f64>::new(8, 2, &mut r).unwrap();
    let row = Tensor::<f64>::rand_uniform(vec![1, 1, 8], -1.0, 1.0, &mut r);
    let x = row.broadcast_to(vec![1, 5, 8]).unwrap();
    let (_, weights) = attn.forward_with_weights(&x).unwrap();
    for v in weights.to_vec() {
        assert!((v - 0.2).abs() < 1e-10);
    }
}

#[test]
fn attention_rows_are_stochastic() {
    let mut r = rng(5);
    let attn = MultiHeadAttention::<f64>::new(16, 4, &mut r).unwrap();
    let x = Tensor::rand_uniform(vec![2, 6, 16], -3.0, 3.0, &mut r);
    let (_, weights) = attn.forward_with_weights(&x).unwrap();
    for row in weights.to_vec().chunks(6) {
        let s: f64 = row.iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
        assert!(row.iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn head_divisibility_enforced() {
    let mut r = rng(6);
    assert!(MultiHeadAttention::<f64>::new(10, 3, &mut r).is_err());
    let bad = VitConfig {
        encoder: EncoderConfig {
            heads: 3,
            ..micro_cfg(false).encoder
        },
        ..micro_cfg(false)
    };
    assert!(bad.validate().is_err());
}

#[test]
fn vit_logits_shape_is_batch_by_eight() {
    let mut r = rng(7);
    let model = VitModel::<f64>::new(micro_cfg(false), &mut r).unwrap();
    let x = Tensor::rand_uniform(vec![2, 3, 8, 8], 0.0, 1.0, &mut r);
    let out = model.forward(&x, &mut ForwardCtx::eval()).unwrap();
    assert_eq!(out.logits.shape(), &[2, 8]);
    assert_eq!(out.features.shape(), &[2, 8]);
    assert!(out.distill_logits.is_none());
}

#[test]
fn identical_images_give_identical_logit_rows() {
    let mut r = rng(8);
    let model = VitModel::<f64>::new(micro_cfg(false), &mut r).unwrap();
    let one = Tensor::<f64>::rand_uniform(vec![1, 3, 8, 8], 0.0, 1.0, &mut r);
    let batch = one.broadcast_to(vec![4, 3, 8, 8]).unwrap();
    let out = model.forward(&batch, &mut ForwardCtx::eval()).unwrap();
    let logits = out.logits.to_vec();
    for row in logits.chunks(8).skip(1) {
        assert_eq!(row, &logits[0..8]);
    }
}

#[test]
fn zeroed_positional_embeddings_make_class_output_permutation_invariant() {
    let mut r = rng(9);
    let model = VitModel::<f64>::new(micro_cfg(false), &mut r).unwrap();
    for v in model.tokens.positional.data_mut().iter_mut() {
        *v = 0.0;
    }
    let x = Tensor::<f64>::rand_uniform(vec![1, 3, 8, 8], 0.0, 1.0, &mut r);

    // Forward with patches in natural order.
    let base = model.forward(&x, &mut ForwardCtx::eval()).unwrap();

    // Permute patch order by flipping the image in both spatial patch axes:
    // with P=4 on an 8x8 image the four patches swap positions wholesale.
    let xd = x.to_vec();
    let mut permuted = xd.clone();
    for c in 0..3 {
        for y in 0..8 {
            for xx in 0..8 {
                // swap patch (py,px) -> (1-py, 1-px), preserving within-patch offsets
                let (py, iy) = (y / 4, y % 4);
                let (px, ix) = (xx / 4, xx % 4);
                let sy = (1 - py) * 4 + iy;
                let sx = (1 - px) * 4 + ix;
                permuted[c * 64 + y * 8 + xx] = xd[c * 64 + sy * 8 + sx];
            }
        }
    }
    let xp = Tensor::from_vec(vec![1, 3, 8, 8], permuted).unwrap();
    let perm = model.forward(&xp, &mut ForwardCtx::eval()).unwrap();
    for (a, b) in base.features.to_vec().iter().zip(perm.features.to_vec()) {
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    }
}

#[test]
fn deit_sequence_has_two_special_tokens_and_combined_rows_sum_to_one() {
    let mut r = rng(10);
    let cfg = micro_cfg(true);
    assert_eq!(cfg.seq_len(), cfg.patch.num_patches() + 2);
    let model = VitModel::<f64>::new(cfg, &mut r).unwrap();
    let x = Tensor::rand_uniform(vec![3, 3, 8, 8], 0.0, 1.0, &mut r);
    let out = model.forward(&x, &mut ForwardCtx::eval()).unwrap();
    let combined = out.combined.expect("distill variant exposes combined");
    for row in combined.to_vec().chunks(8) {
        let s: f64 = row.iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
}

#[test]
fn deit_identical_heads_and_tokens_agree() {
    let mut r = rng(11);
    let model = VitModel::<f64>::new(micro_cfg(true), &mut r).unwrap();
    // copy class head into distill head and class token into distill token
    let dh = model.distill_head.as_ref().unwrap();
    dh.weight
        .data_mut()
        .copy_from_slice(&model.head.weight.to_vec());
    dh.bias.data_mut().copy_from_slice(&model.head.bias.to_vec());
    let dt = model.tokens.distillation_token.as_ref().unwrap();
    dt.data_mut()
        .copy_from_slice(&model.tokens.class_token.to_vec());
    // positional embeddings for positions 0 and 1 must also agree
    {
        let d = 8;
        let mut pos = model.tokens.positional.data_mut();
        let row0: Vec<f64> = pos[0..d].to_vec();
        pos[d..2 * d].copy_from_slice(&row0);
    }
    let x = Tensor::rand_uniform(vec![2, 3, 8, 8], 0.0, 1.0, &mut r);
    let out = model.forward(&x, &mut ForwardCtx::eval()).unwrap();
    let class = out.logits.to_vec();
    let distill = out.distill_logits.unwrap().to_vec();
    for (a, b) in class.iter().zip(&distill) {
        assert!((a - b).abs() < 1e-10);
    }
}
