//! Local binary patterns: circular operators, uniform-pattern histograms,
//! the 48-bit multi-scale per-pixel code and the chi-square block distance.
//!
//! Conventions fixed here and relied on by every trained model:
//! neighbor `k` sits at angle `2πk/p` measured counter-clockwise from east
//! (so "up" is negative `y`), samples are bilinear with replicate padding, and
//! a bit is set when the neighbor is `>=` the center.

use std::ops::Deref;
use std::sync::LazyLock;

use crate::error::{Error, Result};
use crate::imagecore::GrayImage;

/// Side of the square blocks used for Fisher statistics.
pub const BLOCK_SIZE: usize = 10;
/// 59 + 59 + 243.
pub const BLOCK_DESCRIPTOR_LEN: usize = 361;
/// Total bits per pixel in the multi-scale code.
pub const MSLBP_BITS: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LbpConfig {
    pub p: usize,
    pub r: usize,
    pub uniform: bool,
}

impl LbpConfig {
    pub const fn new(p: usize, r: usize, uniform: bool) -> Self {
        Self { p, r, uniform }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.p, 8 | 16) || !(1..=4).contains(&self.r) {
            return Err(Error::Precondition(format!(
                "unsupported LBP operator p={} r={}",
                self.p, self.r
            )));
        }
        Ok(())
    }

    /// `p(p-1) + 3` for uniform operators, `2^p` otherwise.
    pub fn bin_count(&self) -> usize {
        if self.uniform {
            self.p * (self.p - 1) + 3
        } else {
            1 << self.p
        }
    }

    fn offsets(&self) -> Vec<(f64, f64)> {
        neighbor_offsets(self.p, self.r)
    }
}

/// The multi-scale operator set, in bit order (least significant first).
pub const MSLBP_OPERATORS: [LbpConfig; 5] = [
    LbpConfig::new(8, 1, false),
    LbpConfig::new(8, 2, false),
    LbpConfig::new(8, 3, false),
    LbpConfig::new(8, 4, false),
    LbpConfig::new(16, 2, false),
];

/// The three uniform operators concatenated into a block descriptor.
pub const BLOCK_OPERATORS: [LbpConfig; 3] = [
    LbpConfig::new(8, 1, true),
    LbpConfig::new(8, 2, true),
    LbpConfig::new(16, 2, true),
];

/// `(dx, dy)` of each neighbor; components within 1e-9 of an integer are
/// snapped so axis-aligned samples read pixels exactly.
pub fn neighbor_offsets(p: usize, r: usize) -> Vec<(f64, f64)> {
    let snap = |v: f64| {
        let n = v.round();
        if (v - n).abs() < 1e-9 {
            n
        } else {
            v
        }
    };
    (0..p)
        .map(|k| {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / p as f64;
            (snap(r as f64 * theta.cos()), snap(-(r as f64) * theta.sin()))
        })
        .collect()
}

#[inline]
fn sample(img: &GrayImage, y: f64, x: f64) -> f64 {
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = y - y0;
    let fx = x - x0;
    let (yi, xi) = (y0 as isize, x0 as isize);
    let a = f64::from(img.get_clamped(yi, xi));
    if fx == 0.0 && fy == 0.0 {
        return a;
    }
    let b = f64::from(img.get_clamped(yi, xi + 1));
    let c = f64::from(img.get_clamped(yi + 1, xi));
    let d = f64::from(img.get_clamped(yi + 1, xi + 1));
    (1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * c + fx * d)
}

#[inline]
fn code_with_offsets(img: &GrayImage, x: usize, y: usize, offsets: &[(f64, f64)]) -> u32 {
    let center = f64::from(img.get(y, x));
    let (xf, yf) = (x as f64, y as f64);
    offsets
        .iter()
        .enumerate()
        .fold(0u32, |code, (k, &(dx, dy))| {
            if sample(img, yf + dy, xf + dx) >= center {
                code | (1 << k)
            } else {
                code
            }
        })
}

/// Raw (non-uniform) LBP code of the pixel at column `x`, row `y`.
pub fn lbp_code(img: &GrayImage, x: usize, y: usize, cfg: LbpConfig) -> Result<u32> {
    cfg.validate()?;
    if x >= img.width() || y >= img.height() {
        return Err(Error::Geometry(format!(
            "pixel ({x},{y}) outside {}x{} image",
            img.height(),
            img.width()
        )));
    }
    Ok(code_with_offsets(img, x, y, &cfg.offsets()))
}

/// Per-pixel raw codes of one operator over the whole image.
pub fn lbp_plane(img: &GrayImage, cfg: LbpConfig) -> Vec<u32> {
    let offsets = cfg.offsets();
    let mut out = Vec::with_capacity(img.height() * img.width());
    for y in 0..img.height() {
        for x in 0..img.width() {
            out.push(code_with_offsets(img, x, y, &offsets));
        }
    }
    out
}

fn circular_transitions(code: u32, p: usize) -> u32 {
    let mask = if p == 32 { u32::MAX } else { (1u32 << p) - 1 };
    let rotated = ((code >> 1) | (code << (p - 1))) & mask;
    (code ^ rotated).count_ones()
}

pub fn is_uniform(code: u32, p: usize) -> bool {
    circular_transitions(code, p) <= 2
}

/// Bin assignment for uniform histograms: uniform codes get bins in
/// ascending code order, every non-uniform code shares the final bin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UniformTable {
    pub p: usize,
    pub uniform_codes: Vec<u32>,
    bin_of: Vec<u16>,
}

impl UniformTable {
    fn build(p: usize) -> Self {
        let uniform_codes: Vec<u32> = (0..1u32 << p).filter(|&c| is_uniform(c, p)).collect();
        let other = uniform_codes.len() as u16;
        let mut bin_of = vec![other; 1 << p];
        for (bin, &c) in uniform_codes.iter().enumerate() {
            bin_of[c as usize] = bin as u16;
        }
        Self {
            p,
            uniform_codes,
            bin_of,
        }
    }

    pub fn bin_count(&self) -> usize {
        self.uniform_codes.len() + 1
    }

    #[inline]
    pub fn bin(&self, code: u32) -> usize {
        self.bin_of[code as usize] as usize
    }
}

static UNIFORM_8: LazyLock<UniformTable> = LazyLock::new(|| UniformTable::build(8));
static UNIFORM_16: LazyLock<UniformTable> = LazyLock::new(|| UniformTable::build(16));

pub fn uniform_table(p: usize) -> Result<&'static UniformTable> {
    match p {
        8 => Ok(&UNIFORM_8),
        16 => Ok(&UNIFORM_16),
        _ => Err(Error::Precondition(format!("no uniform table for p={p}"))),
    }
}

/// L1-normalized uniform-pattern histogram. An empty code list gives zeros.
pub fn uniform_histogram(codes: &[u32], cfg: LbpConfig) -> Result<Vec<f64>> {
    let table = uniform_table(cfg.p)?;
    let mut hist = vec![0.0; table.bin_count()];
    for &c in codes {
        if (c as usize) >= 1 << cfg.p {
            return Err(Error::Encoding(format!(
                "code {c} out of range for p={}",
                cfg.p
            )));
        }
        hist[table.bin(c)] += 1.0;
    }
    if !codes.is_empty() {
        let n = codes.len() as f64;
        hist.iter_mut().for_each(|h| *h /= n);
    }
    Ok(hist)
}

/// Per-pixel 48-bit multi-scale code, operators packed per
/// [`MSLBP_OPERATORS`] starting at bit 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MslbpFace {
    pub height: usize,
    pub width: usize,
    pub codes: Vec<u64>,
}

impl MslbpFace {
    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u64 {
        self.codes[y * self.width + x]
    }
}

pub fn mslbp_face(img: &GrayImage) -> MslbpFace {
    let mut codes = vec![0u64; img.height() * img.width()];
    let mut shift = 0;
    for cfg in MSLBP_OPERATORS {
        for (dst, c) in codes.iter_mut().zip(lbp_plane(img, cfg)) {
            *dst |= u64::from(c) << shift;
        }
        shift += cfg.p;
    }
    debug_assert_eq!(shift, MSLBP_BITS);
    MslbpFace {
        height: img.height(),
        width: img.width(),
        codes,
    }
}

/// 361-dim concatenation of three uniform histograms over a 10x10 block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDescriptor {
    pub hist: Vec<f64>,
}

impl Deref for BlockDescriptor {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.hist
    }
}

/// Uniform-operator code planes reused across all blocks of a face.
struct BlockPlanes {
    width: usize,
    planes: [Vec<u32>; 3],
}

impl BlockPlanes {
    fn new(img: &GrayImage) -> Self {
        Self {
            width: img.width(),
            planes: BLOCK_OPERATORS.map(|cfg| lbp_plane(img, cfg)),
        }
    }

    fn descriptor(&self, x0: usize, y0: usize) -> BlockDescriptor {
        let mut hist = Vec::with_capacity(BLOCK_DESCRIPTOR_LEN);
        let mut codes = Vec::with_capacity(BLOCK_SIZE * BLOCK_SIZE);
        for (cfg, plane) in BLOCK_OPERATORS.iter().zip(&self.planes) {
            codes.clear();
            for y in y0..y0 + BLOCK_SIZE {
                let row = y * self.width;
                codes.extend_from_slice(&plane[row + x0..row + x0 + BLOCK_SIZE]);
            }
            // codes come from the matching operator, so always in range
            hist.extend(uniform_histogram(&codes, *cfg).expect("in-range codes"));
        }
        BlockDescriptor { hist }
    }
}

/// Descriptor of one 10x10 block; `block` must have integer corners.
pub fn block_descriptor(
    img: &GrayImage,
    block: &crate::imagecore::BoundingBox,
) -> Result<BlockDescriptor> {
    if block.w != BLOCK_SIZE as f64 || block.h != BLOCK_SIZE as f64 {
        return Err(Error::Dimension(format!(
            "block is {}x{}, expected {BLOCK_SIZE}x{BLOCK_SIZE}",
            block.h, block.w
        )));
    }
    if block.x < 0.0
        || block.y < 0.0
        || block.x.fract() != 0.0
        || block.y.fract() != 0.0
        || block.x as usize + BLOCK_SIZE > img.width()
        || block.y as usize + BLOCK_SIZE > img.height()
    {
        return Err(Error::Geometry(format!(
            "block at ({},{}) not inside the image on the pixel grid",
            block.x, block.y
        )));
    }
    Ok(BlockPlanes::new(img).descriptor(block.x as usize, block.y as usize))
}

/// Descriptors of every non-overlapping 10x10 block, row-major over the block grid.
pub fn face_block_descriptors(img: &GrayImage) -> Result<Vec<BlockDescriptor>> {
    if !img.height().is_multiple_of(BLOCK_SIZE) || !img.width().is_multiple_of(BLOCK_SIZE) {
        return Err(Error::Dimension(format!(
            "{}x{} face is not a whole number of {BLOCK_SIZE}x{BLOCK_SIZE} blocks",
            img.height(),
            img.width()
        )));
    }
    let planes = BlockPlanes::new(img);
    let mut out = Vec::with_capacity((img.height() / BLOCK_SIZE) * (img.width() / BLOCK_SIZE));
    for by in 0..img.height() / BLOCK_SIZE {
        for bx in 0..img.width() / BLOCK_SIZE {
            out.push(planes.descriptor(bx * BLOCK_SIZE, by * BLOCK_SIZE));
        }
    }
    Ok(out)
}

/// `Σ (a_k - b_k)^2 / (a_k + b_k)` over bins with positive denominator.
pub fn chi_square(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "histogram lengths {} and {} differ",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter()
        .zip(b)
        .filter(|(x, y)| *x + *y > 0.0)
        .map(|(x, y)| (x - y) * (x - y) / (x + y))
        .sum())
}
