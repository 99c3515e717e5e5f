//! Per-pixel discriminability map ("Fisher face") built from labeled faces.
//!
//! Each 10x10 block gets a Fisher ratio from chi-square distance statistics
//! of same-class and cross-class block pairs; the 12x10 ratio grid is then
//! bilinearly upsampled to the face size and min-max normalized.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imagecore::{GrayImage, FACE_HEIGHT, FACE_WIDTH};
use crate::modelio::{ByteReader, ByteWriter, ModelFile};
use crate::texture::{chi_square, face_block_descriptors, BlockDescriptor, BLOCK_SIZE};

/// Denominator floor for the Fisher ratio.
pub const RATIO_EPS: f64 = 1e-6;
pub const DEFAULT_PAIR_BUDGET: usize = 5000;

/// Means and (population) variances of chi-square block distances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockStats {
    pub mu_g: f64,
    pub sigma_g: f64,
    pub mu_f: f64,
    pub sigma_f: f64,
    pub mu_inter: f64,
    pub sigma_inter: f64,
}

/// `(μg + μf − μinter)² / max(σg + σf − σinter, ε)`.
pub fn fisher_ratio(s: &BlockStats) -> f64 {
    let num = s.mu_g + s.mu_f - s.mu_inter;
    let den = (s.sigma_g + s.sigma_f - s.sigma_inter).max(RATIO_EPS);
    num * num / den
}

/// Index pairs used for the three statistics, drawn once and shared by every block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairPlan {
    pub genuine: Vec<(usize, usize)>,
    pub fake: Vec<(usize, usize)>,
    pub inter: Vec<(usize, usize)>,
}

fn subsample(all: Vec<(usize, usize)>, budget: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    if all.len() <= budget {
        return all;
    }
    let mut picked = index::sample(rng, all.len(), budget).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| all[i]).collect()
}

impl PairPlan {
    /// Sample without replacement up to `budget` pairs per statistic; all
    /// pairs are kept when the budget covers them.
    pub fn draw(n_genuine: usize, n_fake: usize, budget: usize, seed: u64) -> Result<Self> {
        for (name, n) in [("genuine", n_genuine), ("fake", n_fake)] {
            if n < 2 {
                return Err(Error::InsufficientData(format!(
                    "{n} {name} faces, need at least 2"
                )));
            }
        }
        if budget == 0 {
            return Err(Error::Config("pair budget must be positive".into()));
        }
        let within = |n: usize| -> Vec<(usize, usize)> {
            (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
        };
        let across: Vec<_> = (0..n_genuine)
            .flat_map(|i| (0..n_fake).map(move |j| (i, j)))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            genuine: subsample(within(n_genuine), budget, &mut rng),
            fake: subsample(within(n_fake), budget, &mut rng),
            inter: subsample(across, budget, &mut rng),
        })
    }
}

fn mean_var(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

fn stats_for(
    genuine: &[&BlockDescriptor],
    fake: &[&BlockDescriptor],
    plan: &PairPlan,
) -> BlockStats {
    let d = |a: &BlockDescriptor, b: &BlockDescriptor| chi_square(a, b).expect("equal lengths");
    let (mu_g, sigma_g) = mean_var(plan.genuine.iter().map(|&(i, j)| d(genuine[i], genuine[j])));
    let (mu_f, sigma_f) = mean_var(plan.fake.iter().map(|&(i, j)| d(fake[i], fake[j])));
    let (mu_inter, sigma_inter) = mean_var(plan.inter.iter().map(|&(i, j)| d(genuine[i], fake[j])));
    BlockStats {
        mu_g,
        sigma_g,
        mu_f,
        sigma_f,
        mu_inter,
        sigma_inter,
    }
}

fn check_faces(faces: &[GrayImage]) -> Result<()> {
    if let Some(f) = faces
        .iter()
        .find(|f| f.height() != FACE_HEIGHT || f.width() != FACE_WIDTH)
    {
        return Err(Error::Dimension(format!(
            "training face is {}x{}, expected {FACE_HEIGHT}x{FACE_WIDTH}",
            f.height(),
            f.width()
        )));
    }
    Ok(())
}

/// Statistics of block `(row, col)` on the 10x10 block grid.
pub fn block_stats(
    real_faces: &[GrayImage],
    fake_faces: &[GrayImage],
    block_index: (usize, usize),
    pair_budget: usize,
    seed: u64,
) -> Result<BlockStats> {
    let plan = PairPlan::draw(real_faces.len(), fake_faces.len(), pair_budget, seed)?;
    let (row, col) = block_index;
    let block = crate::imagecore::BoundingBox::new(
        (col * BLOCK_SIZE) as f64,
        (row * BLOCK_SIZE) as f64,
        BLOCK_SIZE as f64,
        BLOCK_SIZE as f64,
    )?;
    let describe = |faces: &[GrayImage]| -> Result<Vec<BlockDescriptor>> {
        faces
            .iter()
            .map(|f| crate::texture::block_descriptor(f, &block))
            .collect()
    };
    let g = describe(real_faces)?;
    let f = describe(fake_faces)?;
    let g: Vec<_> = g.iter().collect();
    let f: Vec<_> = f.iter().collect();
    Ok(stats_for(&g, &f, &plan))
}

/// Per-pixel weights in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherFace {
    pub height: usize,
    pub width: usize,
    pub weights: Vec<f64>,
}

impl FisherFace {
    /// All-ones map; histograms weighted by it are plain occurrence counts.
    pub fn uniform(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            weights: vec![1.0; height * width],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.weights[y * self.width + x]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            weights: self.weights.iter().map(|w| w * factor).collect(),
        }
    }
}

impl ModelFile for FisherFace {
    const MAGIC: &'static [u8; 8] = b"FPFISHER";

    fn encode_body(&self, w: &mut ByteWriter) {
        w.len(self.height);
        w.len(self.width);
        w.f64s(&self.weights);
    }

    fn decode_body(r: &mut ByteReader<'_>) -> Result<Self> {
        let height = r.u64()? as usize;
        let width = r.u64()? as usize;
        let weights = r.f64s()?;
        if weights.len() != height * width {
            return Err(Error::Format(format!(
                "fisher face has {} weights for {height}x{width}",
                weights.len()
            )));
        }
        Ok(Self {
            height,
            width,
            weights,
        })
    }
}

/// Bilinear upsampling of a block grid with knots at block centers; pixels
/// beyond the outermost centers replicate the edge value.
pub fn upsample_block_grid(
    grid: &[f64],
    rows: usize,
    cols: usize,
    block: usize,
) -> Vec<f64> {
    let (height, width) = (rows * block, cols * block);
    let half = (block as f64 - 1.0) / 2.0;
    let knot = |p: usize, n: usize| -> (usize, usize, f64) {
        let u = ((p as f64 - half) / block as f64).clamp(0.0, (n - 1) as f64);
        let i0 = (u.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, u - i0 as f64)
    };
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        let (r0, r1, fy) = knot(y, rows);
        for x in 0..width {
            let (c0, c1, fx) = knot(x, cols);
            let g = |r: usize, c: usize| grid[r * cols + c];
            let top = g(r0, c0) * (1.0 - fx) + g(r0, c1) * fx;
            let bot = g(r1, c0) * (1.0 - fx) + g(r1, c1) * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// Fisher ratio of every block, row-major over the 12x10 grid.
pub fn ratio_grid(
    real_faces: &[GrayImage],
    fake_faces: &[GrayImage],
    pair_budget: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_faces(real_faces)?;
    check_faces(fake_faces)?;
    let plan = PairPlan::draw(real_faces.len(), fake_faces.len(), pair_budget, seed)?;
    let describe = |faces: &[GrayImage]| -> Result<Vec<Vec<BlockDescriptor>>> {
        faces.par_iter().map(face_block_descriptors).collect()
    };
    let g = describe(real_faces)?;
    let f = describe(fake_faces)?;
    let n_blocks = (FACE_HEIGHT / BLOCK_SIZE) * (FACE_WIDTH / BLOCK_SIZE);
    Ok((0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let gb: Vec<_> = g.iter().map(|d| &d[b]).collect();
            let fb: Vec<_> = f.iter().map(|d| &d[b]).collect();
            fisher_ratio(&stats_for(&gb, &fb, &plan))
        })
        .collect())
}

pub fn build_fisher_face(
    real_faces: &[GrayImage],
    fake_faces: &[GrayImage],
    pair_budget: usize,
    seed: u64,
) -> Result<FisherFace> {
    let grid = ratio_grid(real_faces, fake_faces, pair_budget, seed)?;
    Ok(fisher_face_from_grid(&grid))
}

/// Upsample and normalize a 12x10 ratio grid. A constant grid maps to all ones.
pub fn fisher_face_from_grid(grid: &[f64]) -> FisherFace {
    let (rows, cols) = (FACE_HEIGHT / BLOCK_SIZE, FACE_WIDTH / BLOCK_SIZE);
    assert_eq!(grid.len(), rows * cols, "ratio grid must be 12x10");
    if grid.iter().all(|&r| r == grid[0]) {
        return FisherFace::uniform(FACE_HEIGHT, FACE_WIDTH);
    }
    let mut weights = upsample_block_grid(grid, rows, cols, BLOCK_SIZE);
    let lo = weights.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    for w in &mut weights {
        *w = ((*w - lo) / span).clamp(0.0, 1.0);
    }
    FisherFace {
        height: FACE_HEIGHT,
        width: FACE_WIDTH,
        weights,
    }
}
