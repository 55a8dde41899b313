use crate::error::{Error, Result};
use crate::smoothing::{ablate_band, AblatedImage, BandSpec};
use crate::tensor::{Scalar, Tape, Tensor, Var};
use crate::data::ImageTensor;

use super::{BoundParams, ModelConfig, ModelParams, LAYER_NORM_EPS};

/// One independent attention unit: a class token followed by the selected
/// patch tokens of `image` (row-major indices, ascending), each keeping its
/// original position embedding.
pub struct Segment<'a> {
    pub image: &'a AblatedImage,
    pub tokens: Vec<usize>,
    /// Per-key mask over `[cls, tokens…]`; `None` attends to the whole unit.
    pub key_mask: Option<Vec<bool>>,
}

/// Tape handles produced by [`forward_segments`].
pub struct ForwardOutput {
    /// Encoder input `H_I`, all segments stacked.
    pub input: Var,
    /// Final-norm encoder output `H_O`, all segments stacked.
    pub hidden: Var,
    /// Class logits, one row per segment.
    pub logits: Var,
    /// Row of each segment's class token within `input`/`hidden`.
    pub offsets: Vec<usize>,
}

/// Materialized activations of a single-segment forward.
#[derive(Clone, Debug)]
pub struct EncoderActivations<T> {
    pub input: Tensor<T>,
    pub output: Tensor<T>,
    pub logits: Tensor<T>,
}

fn patch_rows<T: Scalar>(cfg: &ModelConfig, segments: &[Segment<'_>]) -> Result<Tensor<T>> {
    let p = cfg.patch_size;
    let grid = cfg.grid();
    let mut data = Vec::new();
    let mut rows = 0;
    for seg in segments {
        let img = seg.image;
        if img.width() != cfg.image_side || img.height() != cfg.image_side {
            return Err(Error::Shape {
                op: "patchify_embed",
                lhs: vec![img.input_channels(), img.height(), img.width()],
                rhs: vec![cfg.input_channels, cfg.image_side, cfg.image_side],
            });
        }
        if img.input_channels() != cfg.input_channels {
            return Err(Error::Shape {
                op: "patchify_embed",
                lhs: vec![img.input_channels()],
                rhs: vec![cfg.input_channels],
            });
        }
        for &tok in &seg.tokens {
            if tok >= grid * grid {
                return Err(Error::contract(format!("token {tok} outside the {grid}x{grid} grid")));
            }
            let (ty, tx) = (tok / grid, tok % grid);
            for c in 0..cfg.input_channels {
                for dy in 0..p {
                    for dx in 0..p {
                        data.push(T::of(img.input(c, ty * p + dy, tx * p + dx)));
                    }
                }
            }
            rows += 1;
        }
    }
    Tensor::new(vec![rows, cfg.patch_dim()], data)
}

fn linear<T: Scalar>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add(y, b)
}

fn norm<T: Scalar>(tape: &mut Tape<T>, x: Var, gain: Var, bias: Var) -> Result<Var> {
    let y = tape.layer_norm(x, LAYER_NORM_EPS)?;
    let y = tape.mul(y, gain)?;
    tape.add(y, bias)
}

/// Runs the encoder on independent segments stacked into one batch.
/// Row-wise operations see the whole stack; attention never crosses a
/// segment boundary.
pub fn forward_segments<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &BoundParams,
    cfg: &ModelConfig,
    segments: &[Segment<'_>],
) -> Result<ForwardOutput> {
    if segments.is_empty() {
        return Err(Error::contract("forward needs at least one segment"));
    }
    let d = cfg.embed_dim;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    // patch embedding + position rows
    let patches = tape.leaf(patch_rows::<T>(cfg, segments)?, false);
    let emb = linear(tape, patches, bound.var("patch_embed.weight")?, bound.var("patch_embed.bias")?)?;
    let pos_table = bound.var("pos_embed")?;
    let pos_idx: Vec<usize> = segments.iter().flat_map(|s| s.tokens.iter().map(|t| t + 1)).collect();
    let pos = tape.embedding_lookup(pos_table, pos_idx)?;
    let emb = tape.add(emb, pos)?;
    let cls_pos = tape.embedding_lookup(pos_table, vec![0])?;
    let cls = tape.add(bound.var("cls_token")?, cls_pos)?;

    let mut parts = Vec::with_capacity(2 * segments.len());
    let mut offsets = Vec::with_capacity(segments.len());
    let mut lens = Vec::with_capacity(segments.len());
    let (mut src, mut row) = (0, 0);
    for seg in segments {
        offsets.push(row);
        parts.push(cls);
        if !seg.tokens.is_empty() {
            parts.push(tape.slice(emb, 0, src, seg.tokens.len())?);
        }
        src += seg.tokens.len();
        let len = seg.tokens.len() + 1;
        if let Some(m) = &seg.key_mask {
            if m.len() != len {
                return Err(Error::Shape { op: "attention_mask", lhs: vec![m.len()], rhs: vec![len] });
            }
        }
        lens.push(len);
        row += len;
    }
    let input = tape.concat(&parts, 0)?;

    let mut x = input;
    for layer in 0..cfg.num_layers {
        let name = |s: &str| format!("blocks.{layer}.{s}");
        let block = |tape: &mut Tape<T>, x: Var| -> Result<Var> {
            let h = norm(tape, x, bound.var(&name("norm1.weight"))?, bound.var(&name("norm1.bias"))?)?;
            let qkv = linear(tape, h, bound.var(&name("attn.qkv.weight"))?, bound.var(&name("attn.qkv.bias"))?)?;
            let mut seg_out = Vec::with_capacity(segments.len());
            for (s, seg) in segments.iter().enumerate() {
                let rows = if segments.len() == 1 { qkv } else { tape.slice(qkv, 0, offsets[s], lens[s])? };
                let mut heads = Vec::with_capacity(cfg.num_heads);
                for head in 0..cfg.num_heads {
                    let q = tape.slice(rows, 1, head * dh, dh)?;
                    let k = tape.slice(rows, 1, d + head * dh, dh)?;
                    let v = tape.slice(rows, 1, 2 * d + head * dh, dh)?;
                    let kt = tape.transpose(k)?;
                    let scores = tape.matmul(q, kt)?;
                    let scores = tape.scale(scores, scale)?;
                    let attn = tape.softmax(scores, seg.key_mask.clone())?;
                    heads.push(tape.matmul(attn, v)?);
                }
                seg_out.push(tape.concat(&heads, 1)?);
            }
            let att = tape.concat(&seg_out, 0)?;
            let att = linear(tape, att, bound.var(&name("attn.proj.weight"))?, bound.var(&name("attn.proj.bias"))?)?;
            let x = tape.add(x, att)?;
            let h = norm(tape, x, bound.var(&name("norm2.weight"))?, bound.var(&name("norm2.bias"))?)?;
            let h = linear(tape, h, bound.var(&name("mlp.fc1.weight"))?, bound.var(&name("mlp.fc1.bias"))?)?;
            let h = tape.gelu(h)?;
            let h = linear(tape, h, bound.var(&name("mlp.fc2.weight"))?, bound.var(&name("mlp.fc2.bias"))?)?;
            tape.add(x, h)
        };
        x = block(tape, x).map_err(|e| e.within(format!("encoder block {layer}")))?;
    }
    let hidden = norm(tape, x, bound.var("norm.weight")?, bound.var("norm.bias")?)
        .map_err(|e| e.within("final norm"))?;
    let cls_rows = tape.embedding_lookup(hidden, offsets.clone())?;
    let logits = linear(tape, cls_rows, bound.var("head.weight")?, bound.var("head.bias")?)
        .map_err(|e| e.within("classification head"))?;
    Ok(ForwardOutput { input, hidden, logits, offsets })
}

fn run_single<T: Scalar>(params: &ModelParams<T>, segment: Segment<'_>) -> Result<EncoderActivations<T>> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, |_| false);
    let out = forward_segments(&mut tape, &bound, &params.config, std::slice::from_ref(&segment))?;
    Ok(EncoderActivations {
        input: tape.value(out.input).clone(),
        output: tape.value(out.hidden).clone(),
        logits: tape.value(out.logits).clone(),
    })
}

/// Global attention over the class token and all `N` patch tokens.
pub fn forward_global<T: Scalar>(ablated: &AblatedImage, params: &ModelParams<T>) -> Result<EncoderActivations<T>> {
    let tokens = (0..params.config.num_tokens()).collect();
    run_single(params, Segment { image: ablated, tokens, key_mask: None })
}

/// Patch tokens of the band-unit window for `band`: all rows of the
/// `⌈b/p⌉ + 1` token columns starting at the band's first token column.
pub fn window_tokens(cfg: &ModelConfig, band: &BandSpec) -> Vec<usize> {
    let grid = cfg.grid();
    let span = cfg.window_columns(band.width);
    let start = band.position / cfg.patch_size;
    let mut in_window = vec![false; grid];
    for j in 0..span {
        let c = start + j;
        if band.wrap {
            in_window[c % grid] = true;
        } else if c < grid {
            in_window[c] = true;
        }
    }
    (0..grid * grid).filter(|t| in_window[t % grid]).collect()
}

/// Isolated band-unit attention: the encoder only sees the class token and
/// the window tokens of the ablated image.
pub fn forward_band_unit<T: Scalar>(img: &ImageTensor, params: &ModelParams<T>, band: &BandSpec) -> Result<Tensor<T>> {
    let ablated = ablate_band(img, band)?;
    let tokens = window_tokens(&params.config, band);
    Ok(run_single(params, Segment { image: &ablated, tokens, key_mask: None })?.logits)
}

/// Reference for [`forward_band_unit`]: the full ablated sequence with
/// attention keys restricted to the class token and the window.
pub fn forward_masked_global<T: Scalar>(img: &ImageTensor, params: &ModelParams<T>, band: &BandSpec) -> Result<Tensor<T>> {
    let ablated = ablate_band(img, band)?;
    let cfg = &params.config;
    let window = window_tokens(cfg, band);
    let mut mask = vec![false; cfg.num_tokens() + 1];
    mask[0] = true;
    for t in window {
        mask[t + 1] = true;
    }
    let tokens = (0..cfg.num_tokens()).collect();
    Ok(run_single(params, Segment { image: &ablated, tokens, key_mask: Some(mask) })?.logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vit::AttentionMode;

    fn tiny() -> ModelConfig {
        ModelConfig {
            image_side: 16,
            patch_size: 4,
            embed_dim: 8,
            num_layers: 2,
            num_heads: 2,
            mlp_ratio: 2,
            num_classes: 3,
            input_channels: 4,
            attention_mode: AttentionMode::BandUnit,
            codebook_size: 0,
            teacher_dim: 0,
        }
    }

    fn noise_image(seed: u64) -> ImageTensor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..3 * 16 * 16).map(|_| rng.gen_range(0.0..1.0)).collect();
        ImageTensor::new(3, 16, 16, data).unwrap()
    }

    #[test]
    fn sequence_has_class_token_plus_patches() {
        let params = ModelParams::<f64>::init(&tiny(), 1).unwrap();
        let act = forward_global(&AblatedImage::full(&noise_image(0)), &params).unwrap();
        assert_eq!(act.input.shape(), &[17, 8]);
        assert_eq!(act.output.shape(), &[17, 8]);
        assert_eq!(act.logits.shape(), &[1, 3]);
    }

    #[test]
    fn zero_image_and_projection_leave_position_embeddings() {
        let mut params = ModelParams::<f64>::init(&tiny(), 1).unwrap();
        params.tensors.insert("patch_embed.weight".into(), Tensor::zeros(&[64, 8]).into());
        let zero = ImageTensor::filled(3, 16, 16, 0.0);
        let act = forward_global(&AblatedImage::full(&zero), &params).unwrap();
        let pos = params.get("pos_embed").unwrap();
        let cls = params.get("cls_token").unwrap();
        for j in 0..8 {
            assert_eq!(act.input.row(0)[j], cls.data()[j] + pos.row(0)[j]);
        }
        for i in 1..17 {
            assert_eq!(act.input.row(i), pos.row(i));
        }
    }

    #[test]
    fn window_for_aligned_band_spans_two_columns() {
        let cfg = tiny();
        let toks = window_tokens(&cfg, &BandSpec::new(0, 4));
        assert_eq!(toks, vec![0, 1, 4, 5, 8, 9, 12, 13]);
        let wrapped = window_tokens(&cfg, &BandSpec::new(14, 4));
        assert_eq!(wrapped, vec![0, 3, 4, 7, 8, 11, 12, 15]);
    }

    #[test]
    fn full_width_band_matches_unablated_global() {
        let params = ModelParams::<f64>::init(&tiny(), 2).unwrap();
        let img = noise_image(3);
        let band = forward_band_unit(&img, &params, &BandSpec::new(5, 16)).unwrap();
        let global = forward_global(&AblatedImage::full(&img), &params).unwrap().logits;
        assert_eq!(band, global);
    }

    #[test]
    fn gather_equals_masked_attention() {
        let params = ModelParams::<f64>::init(&tiny(), 4).unwrap();
        let img = noise_image(5);
        for p in 0..16 {
            let band = BandSpec::new(p, 4);
            let a = forward_band_unit(&img, &params, &band).unwrap();
            let b = forward_masked_global(&img, &params, &band).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-10, "p={p}");
        }
    }

    #[test]
    fn geometry_mismatch_is_a_shape_error() {
        let params = ModelParams::<f64>::init(&tiny(), 1).unwrap();
        let img = ImageTensor::filled(3, 8, 8, 0.0);
        let err = forward_global(&AblatedImage::full(&img), &params).unwrap_err();
        assert!(matches!(err, Error::Shape { op: "patchify_embed", .. }));
    }

    #[test]
    fn duplicate_tokens_produce_identical_rows() {
        // two fully ablated patches with equal position rows are
        // indistinguishable to attention
        let mut params = ModelParams::<f64>::init(&tiny(), 6).unwrap();
        let pos = params.get("pos_embed").unwrap().as_ref().clone();
        let mut data = pos.data().to_vec();
        let (r1, r2) = (1 + 6, 1 + 11);
        for j in 0..8 {
            data[r2 * 8 + j] = data[r1 * 8 + j];
        }
        params.tensors.insert("pos_embed".into(), Tensor::new(pos.shape().to_vec(), data).unwrap().into());
        let img = noise_image(7);
        let ab = ablate_band(&img, &BandSpec::new(0, 4)).unwrap();
        let act = forward_global(&ab, &params).unwrap();
        assert_eq!(act.output.row(r1), act.output.row(r2));
    }
}
