//! Texton codebook over 48-bit multi-scale LBP codes and per-pixel
//! bag-of-visual-words encoding.
//!
//! A code is treated as a 48-dim 0/1 vector, so squared Euclidean distance
//! between two codes is their Hamming distance. Textons are leaf means of a
//! median-split KD-tree and therefore real-valued.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::modelio::{ByteReader, ByteWriter, ModelFile};
use crate::texture::{uniform_table, MslbpFace, MSLBP_BITS};

pub const DEFAULT_CODEBOOK_SIZE: usize = 256;
pub const DEFAULT_SAMPLE_RATE: f64 = 0.1;

const DIM: usize = MSLBP_BITS;
const DUPLICATE_NUDGE: f64 = 1e-3;
/// Fast-path distances within this margin of the best are re-checked exactly.
const TIE_MARGIN: f64 = 1e-9;

#[inline]
pub fn bit(code: u64, d: usize) -> f64 {
    ((code >> d) & 1) as f64
}

/// Canonical squared distance between a code's 0/1 expansion and a texton.
#[inline]
pub fn squared_distance(code: u64, texton: &[f64]) -> f64 {
    texton
        .iter()
        .enumerate()
        .map(|(d, &c)| {
            let diff = bit(code, d) - c;
            diff * diff
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    textons: Vec<f64>,
    n_cb: usize,
    /// Uniform-pattern enumerations (p = 8, p = 16) the codebook was trained with.
    bin_order: [Vec<u32>; 2],
    lut: Vec<f64>,
    norms: Vec<f64>,
}

fn current_bin_order() -> [Vec<u32>; 2] {
    [
        uniform_table(8).expect("p=8").uniform_codes.clone(),
        uniform_table(16).expect("p=16").uniform_codes.clone(),
    ]
}

impl Codebook {
    /// Build from row-major textons (`n_cb` rows of 48 components in `[0, 1]`).
    pub fn from_textons(textons: Vec<f64>) -> Result<Self> {
        if textons.is_empty() || !textons.len().is_multiple_of(DIM) {
            return Err(Error::Dimension(format!(
                "{} texton components is not a multiple of {DIM}",
                textons.len()
            )));
        }
        let n_cb = textons.len() / DIM;
        if n_cb < 2 {
            return Err(Error::InsufficientData("codebook needs at least 2 textons".into()));
        }
        if n_cb > usize::from(u16::MAX) + 1 {
            return Err(Error::Config(format!("codebook size {n_cb} exceeds 65536")));
        }
        let mut cb = Self {
            textons,
            n_cb,
            bin_order: current_bin_order(),
            lut: Vec::new(),
            norms: Vec::new(),
        };
        cb.build_tables();
        Ok(cb)
    }

    fn build_tables(&mut self) {
        // Byte-major layout: row (byte, value) holds the partial dot product
        // with every texton, so accumulation runs over contiguous memory.
        let n = self.n_cb;
        let mut lut = vec![0.0; 6 * 256 * n];
        let mut norms = Vec::with_capacity(n);
        for k in 0..n {
            let t = self.texton(k);
            norms.push(t.iter().map(|c| c * c).sum());
            for byte in 0..6 {
                for v in 0..256usize {
                    lut[(byte * 256 + v) * n + k] = (0..8)
                        .filter(|b| v & (1 << b) != 0)
                        .map(|b| t[byte * 8 + b])
                        .sum();
                }
            }
        }
        self.lut = lut;
        self.norms = norms;
    }

    pub fn len(&self) -> usize {
        self.n_cb
    }

    pub fn is_empty(&self) -> bool {
        self.n_cb == 0
    }

    pub fn texton(&self, k: usize) -> &[f64] {
        &self.textons[k * DIM..(k + 1) * DIM]
    }

    pub fn bin_order(&self) -> &[Vec<u32>; 2] {
        &self.bin_order
    }

    /// Index of the nearest texton; ties go to the smallest index. Exactly
    /// equal to a brute-force scan with [`squared_distance`].
    pub fn nearest(&self, code: u64) -> usize {
        let ones = code.count_ones() as f64;
        let bytes = code.to_le_bytes();
        let n = self.n_cb;
        let mut approx = self.norms.clone();
        for (b, &v) in bytes.iter().take(6).enumerate() {
            let row = &self.lut[(b * 256 + v as usize) * n..][..n];
            for (a, &r) in approx.iter_mut().zip(row) {
                *a -= 2.0 * r;
            }
        }
        for a in approx.iter_mut() {
            *a += ones;
        }
        let best = approx.iter().copied().fold(f64::INFINITY, f64::min);
        let mut winner = usize::MAX;
        let mut winner_d = f64::INFINITY;
        for (k, &a) in approx.iter().enumerate() {
            if a <= best + TIE_MARGIN {
                let d = squared_distance(code, self.texton(k));
                if d < winner_d {
                    winner_d = d;
                    winner = k;
                }
            }
        }
        winner
    }
}

impl ModelFile for Codebook {
    const MAGIC: &'static [u8; 8] = b"FPCODEBK";

    fn encode_body(&self, w: &mut ByteWriter) {
        w.len(self.n_cb);
        w.len(DIM);
        w.f64s(&self.textons);
        w.u32s(&self.bin_order[0]);
        w.u32s(&self.bin_order[1]);
    }

    fn decode_body(r: &mut ByteReader<'_>) -> Result<Self> {
        let n_cb = r.u64()? as usize;
        let dim = r.u64()? as usize;
        if dim != DIM {
            return Err(Error::ModelCompatibility(format!(
                "codebook dimension {dim}, expected {DIM}"
            )));
        }
        let textons = r.f64s()?;
        if textons.len() != n_cb * DIM {
            return Err(Error::Format("codebook texton count mismatch".into()));
        }
        let order = [r.u32s()?, r.u32s()?];
        if order != current_bin_order() {
            return Err(Error::ModelCompatibility(
                "codebook was trained with a different uniform-pattern ordering".into(),
            ));
        }
        Self::from_textons(textons)
    }
}

/// Per-pixel codeword indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BovwFace {
    pub height: usize,
    pub width: usize,
    pub indices: Vec<u16>,
}

impl BovwFace {
    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u16 {
        self.indices[y * self.width + x]
    }
}

pub fn encode_bovw(face: &MslbpFace, cb: &Codebook) -> BovwFace {
    // Faces repeat a small set of codes, so each distinct code is looked up once.
    let mut distinct = face.codes.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let words: Vec<u16> = distinct.par_iter().map(|&c| cb.nearest(c) as u16).collect();
    let indices = face
        .codes
        .iter()
        .map(|c| words[distinct.binary_search(c).expect("code present")])
        .collect();
    BovwFace {
        height: face.height,
        width: face.width,
        indices,
    }
}

/// Result of the KD-tree construction: textons plus the leaf of every sample.
pub(crate) struct KdBuild {
    pub textons: Vec<f64>,
    #[cfg_attr(not(test), allow(dead_code))]
    pub leaf_of: Vec<usize>,
}

fn leaf_mean(points: &[u64], members: &[u32]) -> [f64; DIM] {
    let mut m = [0.0; DIM];
    for &i in members {
        let c = points[i as usize];
        for (d, v) in m.iter_mut().enumerate() {
            *v += bit(c, d);
        }
    }
    let n = members.len() as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

/// Dimension of largest variance (0/1 data: `m(1-m)`), lowest index on ties.
fn max_variance_dim(mean: &[f64; DIM]) -> (usize, f64) {
    mean.iter()
        .map(|m| m * (1.0 - m))
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (d, v)| if v > best.1 { (d, v) } else { best })
}

pub(crate) fn kd_build(points: &[u64], n_cb: usize) -> Result<KdBuild> {
    if points.len() < n_cb {
        return Err(Error::InsufficientData(format!(
            "{} sampled pixels for {n_cb} textons",
            points.len()
        )));
    }
    let mut leaves: Vec<Vec<u32>> = vec![(0..points.len() as u32).collect()];
    while leaves.len() < n_cb {
        // split the most populous leaf, earliest on ties
        let (li, _) = leaves
            .iter()
            .enumerate()
            .fold((0, 0), |best, (i, l)| if l.len() > best.1 { (i, l.len()) } else { best });
        let leaf = std::mem::take(&mut leaves[li]);
        let (dim, _) = max_variance_dim(&leaf_mean(points, &leaf));
        let mut sorted = leaf;
        sorted.sort_by_key(|&i| (points[i as usize] >> dim) & 1);
        let upper = sorted.split_off(sorted.len() / 2);
        leaves[li] = sorted;
        leaves.insert(li + 1, upper);
    }
    let mut textons = Vec::with_capacity(n_cb * DIM);
    let mut leaf_of = vec![0; points.len()];
    let mut seen: Vec<[f64; DIM]> = Vec::with_capacity(n_cb);
    for (li, members) in leaves.iter().enumerate() {
        let mut mean = leaf_mean(points, members);
        let (dim, _) = max_variance_dim(&mean);
        let mut step = 1.0;
        while seen.contains(&mean) {
            let delta = DUPLICATE_NUDGE * step;
            mean[dim] = if mean[dim] < 0.5 {
                (mean[dim] + delta).min(1.0)
            } else {
                (mean[dim] - delta).max(0.0)
            };
            step += 1.0;
        }
        seen.push(mean);
        textons.extend_from_slice(&mean);
        for &i in members {
            leaf_of[i as usize] = li;
        }
    }
    Ok(KdBuild { textons, leaf_of })
}

/// Draw `round(rate * pixels)` (at least one) pixels per face without replacement.
pub fn sample_codes(faces: &[MslbpFace], sample_rate: f64, seed: u64) -> Result<Vec<u64>> {
    if !(sample_rate > 0.0 && sample_rate <= 1.0) {
        return Err(Error::Config(format!(
            "sample rate {sample_rate} must be in (0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for f in faces {
        let n = f.codes.len();
        if n == 0 {
            continue;
        }
        let m = ((sample_rate * n as f64).round() as usize).clamp(1, n);
        let mut idx = index::sample(&mut rng, n, m).into_vec();
        idx.sort_unstable();
        out.extend(idx.into_iter().map(|i| f.codes[i]));
    }
    Ok(out)
}

pub fn train_codebook(
    faces: &[MslbpFace],
    sample_rate: f64,
    n_cb: usize,
    seed: u64,
) -> Result<Codebook> {
    if n_cb < 2 {
        return Err(Error::Config(format!("codebook size {n_cb} must be >= 2")));
    }
    let points = sample_codes(faces, sample_rate, seed)?;
    let build = kd_build(&points, n_cb)?;
    Codebook::from_textons(build.textons)
}
