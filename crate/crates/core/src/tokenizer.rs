//! Reconstruction targets: a pixel-space k-means codebook (discrete visual
//! tokens) and a frozen teacher transformer (feature targets).

use std::collections::HashSet;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{ImageTensor, LabeledImage};
use crate::error::{Error, Result};
use crate::smoothing::AblatedImage;
use crate::tensor::Tensor;
use crate::vit::{forward_global, AttentionMode, ModelParams};

pub const CODEBOOK_MAGIC: &[u8; 4] = b"ECCB";
pub const CODEBOOK_VERSION: u32 = 1;
pub const KMEANS_ITERATIONS: usize = 50;

/// `K` centroids over flattened RGB patches (`c, dy, dx` order).
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    pub patch_size: usize,
    pub k: usize,
    pub dim: usize,
    /// `k × dim`, row-major.
    pub centroids: Vec<f64>,
}

/// Flattened RGB patch vectors of one image, row-major over the patch grid.
pub fn patch_vectors(img: &ImageTensor, patch_size: usize) -> Result<Vec<Vec<f64>>> {
    let side = img.side()?;
    if patch_size == 0 || side % patch_size != 0 {
        return Err(Error::contract(format!("image side {side} is not divisible by patch size {patch_size}")));
    }
    let grid = side / patch_size;
    let mut out = Vec::with_capacity(grid * grid);
    for ty in 0..grid {
        for tx in 0..grid {
            let mut v = Vec::with_capacity(img.channels() * patch_size * patch_size);
            for c in 0..img.channels() {
                for dy in 0..patch_size {
                    for dx in 0..patch_size {
                        v.push(img.get(c, ty * patch_size + dy, tx * patch_size + dx));
                    }
                }
            }
            out.push(v);
        }
    }
    Ok(out)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl Codebook {
    pub fn centroid(&self, i: usize) -> &[f64] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    /// Nearest centroid; ties go to the lowest index.
    pub fn nearest(&self, v: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for i in 0..self.k {
            let d = sq_dist(v, self.centroid(i));
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    /// Mean squared error per pixel value when every patch is replaced by
    /// its centroid.
    pub fn quantization_mse(&self, images: &[LabeledImage]) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for item in images {
            for v in patch_vectors(&item.image, self.patch_size)? {
                total += sq_dist(&v, self.centroid(self.nearest(&v)));
                count += v.len();
            }
        }
        Ok(total / count.max(1) as f64)
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(CODEBOOK_MAGIC)?;
        for v in [CODEBOOK_VERSION, self.k as u32, self.dim as u32] {
            out.write_all(&v.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(4 * self.centroids.len());
        for &c in &self.centroids {
            buf.extend_from_slice(&(c as f32).to_le_bytes());
        }
        out.write_all(&buf)?;
        out.flush()?;
        Ok(())
    }

    /// Reads an `ECCB` file. The patch size is recovered from `dim = 3p²`.
    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        if bytes.len() < 16 || &bytes[..4] != CODEBOOK_MAGIC {
            return Err(Error::format("not an ECCB codebook"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
        let version = word(1);
        if version != CODEBOOK_VERSION {
            return Err(Error::Version { found: version, expected: CODEBOOK_VERSION });
        }
        let (k, dim) = (word(2) as usize, word(3) as usize);
        let patch_size = ((dim / 3) as f64).sqrt().round() as usize;
        if patch_size * patch_size * 3 != dim || dim == 0 {
            return Err(Error::format(format!("codebook dim {dim} is not 3·p²")));
        }
        let body = &bytes[16..];
        if body.len() != 4 * k * dim {
            return Err(Error::format(format!(
                "codebook holds {} bytes of centroids, expected {}",
                body.len(),
                4 * k * dim
            )));
        }
        let centroids = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        Ok(Self { patch_size, k, dim, centroids })
    }
}

/// Seeded k-means++ initialisation followed by a fixed number of Lloyd
/// iterations over every patch of `images`. Centroids are rounded to `f32`
/// so a saved codebook tokenizes exactly like the in-memory one.
pub fn fit_codebook(images: &[LabeledImage], patch_size: usize, k: usize, seed: u64) -> Result<Codebook> {
    if images.is_empty() {
        return Err(Error::contract("cannot fit a codebook on an empty dataset"));
    }
    if k == 0 {
        return Err(Error::contract("codebook size must be positive"));
    }
    let mut points = Vec::new();
    for item in images {
        points.extend(patch_vectors(&item.image, patch_size)?);
    }
    let dim = points[0].len();
    let mut seen = HashSet::new();
    let distinct: Vec<&Vec<f64>> = points
        .iter()
        .filter(|p| seen.insert(p.iter().map(|v| v.to_bits()).collect::<Vec<_>>()))
        .collect();
    if k > distinct.len() {
        return Err(Error::contract(format!(
            "codebook size {k} exceeds the {} distinct patches in the dataset",
            distinct.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = vec![distinct[rng.gen_range(0..distinct.len())].clone()];
    let mut nearest: Vec<f64> = distinct.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let mut pick = rng.gen_range(0.0..1.0) * total;
        let mut chosen = None;
        for (i, &d) in nearest.iter().enumerate() {
            if d > 0.0 {
                chosen = Some(i);
                if pick < d {
                    break;
                }
                pick -= d;
            }
        }
        let chosen = chosen.expect("a distinct patch remains at positive distance");
        let c = distinct[chosen].clone();
        for (n, p) in nearest.iter_mut().zip(&distinct) {
            *n = n.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }

    let mut flat: Vec<f64> = centroids.concat();
    for _ in 0..KMEANS_ITERATIONS {
        let cb = Codebook { patch_size, k, dim, centroids: flat.clone() };
        let assign: Vec<usize> = points.par_iter().map(|p| cb.nearest(p)).collect();
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for (s, v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                for i in 0..dim {
                    flat[j * dim + i] = sums[j * dim + i] / counts[j] as f64;
                }
            }
        }
    }
    for v in &mut flat {
        *v = *v as f32 as f64;
    }
    Ok(Codebook { patch_size, k, dim, centroids: flat })
}

/// Visual tokens of the clean image: one centroid index per patch.
pub fn tokenize(img: &ImageTensor, cb: &Codebook) -> Result<Vec<usize>> {
    Ok(patch_vectors(img, cb.patch_size)?.iter().map(|v| cb.nearest(v)).collect())
}

/// A frozen globally-attending classifier whose final-norm patch features
/// serve as distillation targets.
#[derive(Clone, Debug)]
pub struct TeacherModel {
    params: ModelParams<f64>,
}

impl TeacherModel {
    pub fn new(params: ModelParams<f64>) -> Self {
        Self { params: params.with_attention_mode(AttentionMode::Global) }
    }

    pub fn params(&self) -> &ModelParams<f64> {
        &self.params
    }

    pub fn feature_dim(&self) -> usize {
        self.params.config.embed_dim
    }
}

/// Final-norm encoder rows of the patch tokens (class token excluded) on
/// the clean image, `N × d_teacher`.
pub fn teacher_features(teacher: &TeacherModel, img: &ImageTensor) -> Result<Tensor<f64>> {
    let cfg = &teacher.params.config;
    if img.side()? != cfg.image_side {
        return Err(Error::contract(format!(
            "teacher expects {}x{} images, got {}x{}",
            cfg.image_side,
            cfg.image_side,
            img.height(),
            img.width()
        )));
    }
    let acts = forward_global(&AblatedImage::full(img), &teacher.params)?;
    let n = cfg.num_tokens();
    let d = cfg.embed_dim;
    Tensor::new(vec![n, d], acts.output.data()[d..].to_vec())
}
