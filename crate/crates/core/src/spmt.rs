//! Spatial-pyramid micro-texture descriptor.
//!
//! Layout of the raw vector, each segment `N_cb` long and regions ordered
//! level-ascending then row-major:
//!
//! ```text
//! [ BH(region 0..R) | M_genuine(region 0..R) | M_fake(region 0..R) ]
//! ```
//!
//! With the default two-level pyramid `R = 7`, so the raw length is
//! `21 * N_cb` (5376 for 256 textons).

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::codebook::{encode_bovw, BovwFace, Codebook};
use crate::error::{Error, Result};
use crate::fisherface::FisherFace;
use crate::imagecore::{BoundingBox, GrayImage, PixelRect, FACE_HEIGHT, FACE_WIDTH};
use crate::modelio::{ByteReader, ByteWriter, ModelFile};
use crate::texture::mslbp_face;

pub const DEFAULT_LEVELS: usize = 2;
pub const DEFAULT_PCA_DIM: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PyramidRegion {
    pub level: usize,
    pub index: usize,
    pub rect: PixelRect,
}

impl PyramidRegion {
    pub fn area(&self) -> usize {
        self.rect.width() * self.rect.height()
    }

    pub fn bbox(&self) -> BoundingBox {
        BoundingBox {
            x: self.rect.x0 as f64,
            y: self.rect.y0 as f64,
            w: self.rect.width() as f64,
            h: self.rect.height() as f64,
        }
    }
}

/// Face-aware pyramid over an `height x width` face.
///
/// Level 0 is the whole face, level 1 splits rows at `h/4` and `3h/4` and
/// columns at `w/2` (3x2 regions), levels from 2 on use the classical
/// `2^l x 2^l` grid.
pub fn pyramid_regions_for(levels: usize, height: usize, width: usize) -> Result<Vec<PyramidRegion>> {
    if levels == 0 {
        return Err(Error::Config("pyramid needs at least one level".into()));
    }
    let mut out = vec![PyramidRegion {
        level: 0,
        index: 0,
        rect: PixelRect {
            x0: 0,
            y0: 0,
            x1: width,
            y1: height,
        },
    }];
    let split = |n: usize, parts: usize| -> Vec<usize> {
        (0..=parts).map(|k| (k * n + parts / 2) / parts).collect()
    };
    for level in 1..levels {
        let (rows, cols) = if level == 1 {
            (vec![0, height / 4, height - height / 4, height], split(width, 2))
        } else {
            let parts = 1 << level;
            (split(height, parts), split(width, parts))
        };
        let mut index = 0;
        for r in rows.windows(2) {
            for c in cols.windows(2) {
                out.push(PyramidRegion {
                    level,
                    index,
                    rect: PixelRect {
                        x0: c[0],
                        y0: r[0],
                        x1: c[1],
                        y1: r[1],
                    },
                });
                index += 1;
            }
        }
    }
    Ok(out)
}

/// Pyramid over the canonical 120x100 face.
pub fn pyramid_regions(levels: usize) -> Result<Vec<PyramidRegion>> {
    pyramid_regions_for(levels, FACE_HEIGHT, FACE_WIDTH)
}

fn check_region(region: &PyramidRegion, height: usize, width: usize) -> Result<()> {
    let r = region.rect;
    if r.x1 > width || r.y1 > height || r.x0 >= r.x1 || r.y0 >= r.y1 {
        return Err(Error::Geometry(format!(
            "region {r:?} outside {height}x{width} face"
        )));
    }
    Ok(())
}

fn check_aligned(bovw: &BovwFace, fisher: &FisherFace) -> Result<()> {
    if bovw.height != fisher.height || bovw.width != fisher.width {
        return Err(Error::Dimension(format!(
            "code face {}x{} vs fisher face {}x{}",
            bovw.height, bovw.width, fisher.height, fisher.width
        )));
    }
    Ok(())
}

/// Fisher-weighted codeword counts inside a region (no normalization).
fn weighted_counts(indices: &[u16], width: usize, fisher: &FisherFace, rect: PixelRect, n_cb: usize) -> Vec<f64> {
    let mut counts = vec![0.0; n_cb];
    for y in rect.y0..rect.y1 {
        for x in rect.x0..rect.x1 {
            counts[indices[y * width + x] as usize] += fisher.get(y, x);
        }
    }
    counts
}

/// `BH[k] = (1/|region|) Σ F_fs(i,j) · 1[F_bw(i,j) = k]`.
pub fn weighted_bovw_histogram(
    bovw: &BovwFace,
    fisher: &FisherFace,
    region: &PyramidRegion,
    n_cb: usize,
) -> Result<Vec<f64>> {
    check_aligned(bovw, fisher)?;
    check_region(region, bovw.height, bovw.width)?;
    check_indices(&bovw.indices, n_cb)?;
    let area = region.area() as f64;
    let mut h = weighted_counts(&bovw.indices, bovw.width, fisher, region.rect, n_cb);
    h.iter_mut().for_each(|v| *v /= area);
    Ok(h)
}

fn check_indices(indices: &[u16], n_cb: usize) -> Result<()> {
    if let Some(&bad) = indices.iter().find(|&&i| usize::from(i) >= n_cb) {
        return Err(Error::ModelCompatibility(format!(
            "codeword {bad} out of range for a {n_cb}-texton codebook"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassTag {
    Genuine,
    Fake,
}

/// Per-pixel modal codeword of one class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassSpecificFace {
    pub height: usize,
    pub width: usize,
    pub indices: Vec<u16>,
    pub class_tag: ClassTag,
}

pub fn class_specific_face(
    training: &[BovwFace],
    class_tag: ClassTag,
    n_cb: usize,
) -> Result<ClassSpecificFace> {
    let first = training.first().ok_or_else(|| {
        Error::InsufficientData(format!("no training faces for class {class_tag:?}"))
    })?;
    let (height, width) = (first.height, first.width);
    for f in training {
        if (f.height, f.width) != (height, width) {
            return Err(Error::Dimension("training code faces differ in size".into()));
        }
        check_indices(&f.indices, n_cb)?;
    }
    let indices = (0..height * width)
        .into_par_iter()
        .map_init(
            || vec![0u32; n_cb],
            |votes, p| {
                votes.iter_mut().for_each(|v| *v = 0);
                for f in training {
                    votes[f.indices[p] as usize] += 1;
                }
                // first maximum wins, i.e. the smallest codeword on ties
                let (best, _) = votes
                    .iter()
                    .enumerate()
                    .fold((0, 0), |b, (k, &v)| if v > b.1 { (k, v) } else { b });
                best as u16
            },
        )
        .collect();
    Ok(ClassSpecificFace {
        height,
        width,
        indices,
        class_tag,
    })
}

/// Per-codeword similarity between the face's and the class face's
/// Fisher-weighted counts, L1-normalized.
pub fn matching_degree(
    bovw: &BovwFace,
    csf: &ClassSpecificFace,
    fisher: &FisherFace,
    region: &PyramidRegion,
    n_cb: usize,
) -> Result<Vec<f64>> {
    check_aligned(bovw, fisher)?;
    if (csf.height, csf.width) != (bovw.height, bovw.width) {
        return Err(Error::Dimension("class-specific face size differs from code face".into()));
    }
    check_region(region, bovw.height, bovw.width)?;
    check_indices(&bovw.indices, n_cb)?;
    check_indices(&csf.indices, n_cb)?;
    let f = weighted_counts(&bovw.indices, bovw.width, fisher, region.rect, n_cb);
    let c = weighted_counts(&csf.indices, csf.width, fisher, region.rect, n_cb);
    let mut m = matching_degree_raw(&f, &c);
    l1_normalize(&mut m);
    Ok(m)
}

/// Unnormalized matching degree: 1 where both counts vanish, 0 where exactly
/// one does, `min(f/c, c/f)` otherwise.
pub fn matching_degree_raw(f: &[f64], c: &[f64]) -> Vec<f64> {
    f.iter()
        .zip(c)
        .map(|(&a, &b)| match (a == 0.0, b == 0.0) {
            (true, true) => 1.0,
            (true, false) | (false, true) => 0.0,
            _ => a.min(b) / a.max(b),
        })
        .collect()
}

fn l1_normalize(v: &mut [f64]) {
    let s: f64 = v.iter().map(|x| x.abs()).sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpmtVector {
    pub raw: Vec<f64>,
    pub reduced: Option<Vec<f64>>,
}

impl SpmtVector {
    /// The reduced vector when present, else the raw one.
    pub fn features(&self) -> &[f64] {
        self.reduced.as_deref().unwrap_or(&self.raw)
    }
}

/// Principal components of raw descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Row-major, one unit-norm component per row.
    pub basis: Vec<f64>,
    pub explained_variance: Vec<f64>,
    /// Component count asked for before clipping.
    pub requested: usize,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn components(&self) -> usize {
        self.explained_variance.len()
    }

    pub fn component(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.basis[i * d..(i + 1) * d]
    }
}

/// Fit by eigen-decomposition of the centered Gram matrix, which is `n x n`
/// and therefore cheap when there are fewer samples than dimensions. The
/// component count is clipped to `min(k, n - 1, d)` and to the numerical rank.
pub fn pca_fit(vectors: &[Vec<f64>], k: usize) -> Result<PcaModel> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "PCA needs at least 2 vectors, got {n}"
        )));
    }
    let d = vectors[0].len();
    if vectors.iter().any(|v| v.len() != d) {
        return Err(Error::Dimension("PCA inputs differ in length".into()));
    }
    let mut mean = vec![0.0; d];
    for v in vectors {
        mean.iter_mut().zip(v).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| vectors[i][j] - mean[j]);
    let gram = &centered * centered.transpose();
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let want = k.min(n - 1).min(d);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(want);
    let mut explained = Vec::with_capacity(want);
    for &i in order.iter().take(want) {
        let lambda = eig.eigenvalues[i];
        if !(lambda > 1e-10 * top) || lambda <= 0.0 {
            break;
        }
        let u = eig.eigenvectors.column(i);
        let mut v: Vec<f64> = (centered.transpose() * u).iter().copied().collect();
        // Gram-Schmidt against earlier components, then normalize
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            break;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        // sign convention: largest-magnitude entry positive
        let (_, pivot) = v
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |b, (j, &x)| if x.abs() > b.1.abs() { (j, x) } else { b });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        explained.push(lambda / (n - 1) as f64);
        basis.push(v);
    }
    Ok(PcaModel {
        mean,
        basis: basis.concat(),
        explained_variance: explained,
        requested: k,
    })
}

pub fn pca_project(v: &[f64], model: &PcaModel) -> Result<Vec<f64>> {
    if v.len() != model.dim() {
        return Err(Error::Dimension(format!(
            "vector length {} vs PCA dimension {}",
            v.len(),
            model.dim()
        )));
    }
    let centered: Vec<f64> = v.iter().zip(&model.mean).map(|(x, m)| x - m).collect();
    Ok((0..model.components())
        .map(|i| model.component(i).iter().zip(&centered).map(|(a, b)| a * b).sum())
        .collect())
}

/// Map projected coordinates back into the raw space.
pub fn pca_reconstruct(coords: &[f64], model: &PcaModel) -> Vec<f64> {
    let mut out = model.mean.clone();
    for (i, &c) in coords.iter().enumerate().take(model.components()) {
        out.iter_mut()
            .zip(model.component(i))
            .for_each(|(o, b)| *o += c * b);
    }
    out
}

impl ModelFile for PcaModel {
    const MAGIC: &'static [u8; 8] = b"FPPCAMDL";

    fn encode_body(&self, w: &mut ByteWriter) {
        w.len(self.requested);
        w.f64s(&self.mean);
        w.f64s(&self.explained_variance);
        w.f64s(&self.basis);
    }

    fn decode_body(r: &mut ByteReader<'_>) -> Result<Self> {
        let requested = r.u64()? as usize;
        let mean = r.f64s()?;
        let explained_variance = r.f64s()?;
        let basis = r.f64s()?;
        if basis.len() != mean.len() * explained_variance.len() {
            return Err(Error::Format("PCA basis size mismatch".into()));
        }
        Ok(Self {
            mean,
            basis,
            explained_variance,
            requested,
        })
    }
}

impl ModelFile for ClassSpecificFace {
    const MAGIC: &'static [u8; 8] = b"FPCLASSF";

    fn encode_body(&self, w: &mut ByteWriter) {
        w.u8(match self.class_tag {
            ClassTag::Genuine => 0,
            ClassTag::Fake => 1,
        });
        w.len(self.height);
        w.len(self.width);
        w.u16s(&self.indices);
    }

    fn decode_body(r: &mut ByteReader<'_>) -> Result<Self> {
        let class_tag = match r.u8()? {
            0 => ClassTag::Genuine,
            1 => ClassTag::Fake,
            t => return Err(Error::Format(format!("unknown class tag {t}"))),
        };
        let height = r.u64()? as usize;
        let width = r.u64()? as usize;
        let indices = r.u16s()?;
        if indices.len() != height * width {
            return Err(Error::Format("class-specific face size mismatch".into()));
        }
        Ok(Self {
            height,
            width,
            indices,
            class_tag,
        })
    }
}

/// Everything needed to turn a cropped face into an SPMT vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SpmtModel {
    pub levels: usize,
    pub codebook: Codebook,
    pub fisher: FisherFace,
    pub genuine: ClassSpecificFace,
    pub fake: ClassSpecificFace,
    pub pca: Option<PcaModel>,
}

impl SpmtModel {
    pub fn raw_len(&self) -> Result<usize> {
        Ok(3 * pyramid_regions_for(self.levels, self.fisher.height, self.fisher.width)?.len()
            * self.codebook.len())
    }

    pub fn extract(&self, face: &GrayImage) -> Result<SpmtVector> {
        let bovw = self.encode(face)?;
        self.extract_from_bovw(&bovw)
    }

    /// Code face of a cropped face with this model's codebook.
    pub fn encode(&self, face: &GrayImage) -> Result<BovwFace> {
        if (face.height(), face.width()) != (self.fisher.height, self.fisher.width) {
            return Err(Error::Dimension(format!(
                "face {}x{} vs model {}x{}",
                face.height(),
                face.width(),
                self.fisher.height,
                self.fisher.width
            )));
        }
        Ok(encode_bovw(&mslbp_face(face), &self.codebook))
    }

    pub fn extract_from_bovw(&self, bovw: &BovwFace) -> Result<SpmtVector> {
        let n_cb = self.codebook.len();
        let regions = pyramid_regions_for(self.levels, bovw.height, bovw.width)?;
        let mut raw = Vec::with_capacity(3 * regions.len() * n_cb);
        for r in &regions {
            raw.extend(weighted_bovw_histogram(bovw, &self.fisher, r, n_cb)?);
        }
        for csf in [&self.genuine, &self.fake] {
            for r in &regions {
                raw.extend(matching_degree(bovw, csf, &self.fisher, r, n_cb)?);
            }
        }
        let reduced = match &self.pca {
            Some(p) => {
                if p.dim() != raw.len() {
                    return Err(Error::ModelCompatibility(format!(
                        "PCA fitted on {}-dim vectors, descriptor has {}",
                        p.dim(),
                        raw.len()
                    )));
                }
                Some(pca_project(&raw, p)?)
            }
            None => None,
        };
        Ok(SpmtVector { raw, reduced })
    }

    fn validate(&self) -> Result<()> {
        let n_cb = self.codebook.len();
        for csf in [&self.genuine, &self.fake] {
            if (csf.height, csf.width) != (self.fisher.height, self.fisher.width) {
                return Err(Error::ModelCompatibility(
                    "class-specific face and fisher face differ in size".into(),
                ));
            }
            check_indices(&csf.indices, n_cb)?;
        }
        if let Some(p) = &self.pca {
            if p.dim() != self.raw_len()? {
                return Err(Error::ModelCompatibility(format!(
                    "PCA dimension {} does not match descriptor length {}",
                    p.dim(),
                    self.raw_len()?
                )));
            }
        }
        Ok(())
    }
}

/// Free-function form of [`SpmtModel::extract`].
pub fn extract_spmt(
    face: &GrayImage,
    cb: &Codebook,
    fisher: &FisherFace,
    csf_g: &ClassSpecificFace,
    csf_f: &ClassSpecificFace,
    pca: Option<&PcaModel>,
) -> Result<SpmtVector> {
    let model = SpmtModel {
        levels: DEFAULT_LEVELS,
        codebook: cb.clone(),
        fisher: fisher.clone(),
        genuine: csf_g.clone(),
        fake: csf_f.clone(),
        pca: pca.cloned(),
    };
    model.validate()?;
    model.extract(face)
}

impl ModelFile for SpmtModel {
    const MAGIC: &'static [u8; 8] = b"FPSPMTMD";

    fn encode_body(&self, w: &mut ByteWriter) {
        w.len(self.levels);
        w.str("regions:level-major,row-major;segments:bh,match-genuine,match-fake");
        self.codebook.encode_body(w);
        self.fisher.encode_body(w);
        self.genuine.encode_body(w);
        self.fake.encode_body(w);
        match &self.pca {
            Some(p) => {
                w.u8(1);
                p.encode_body(w);
            }
            None => w.u8(0),
        }
    }

    fn decode_body(r: &mut ByteReader<'_>) -> Result<Self> {
        let levels = r.u64()? as usize;
        let layout = r.str()?;
        if layout != "regions:level-major,row-major;segments:bh,match-genuine,match-fake" {
            return Err(Error::ModelCompatibility(format!("unknown descriptor layout {layout:?}")));
        }
        let codebook = Codebook::decode_body(r)?;
        let fisher = FisherFace::decode_body(r)?;
        let genuine = ClassSpecificFace::decode_body(r)?;
        let fake = ClassSpecificFace::decode_body(r)?;
        let pca = match r.u8()? {
            0 => None,
            1 => Some(PcaModel::decode_body(r)?),
            t => return Err(Error::Format(format!("bad PCA flag {t}"))),
        };
        let m = Self {
            levels,
            codebook,
            fisher,
            genuine,
            fake,
            pca,
        };
        m.validate()?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn region(x0: usize, y0: usize, x1: usize, y1: usize) -> PyramidRegion {
        PyramidRegion {
            level: 0,
            index: 0,
            rect: PixelRect { x0, y0, x1, y1 },
        }
    }

    fn random_bovw(h: usize, w: usize, n_cb: usize, rng: &mut ChaCha8Rng) -> BovwFace {
        BovwFace {
            height: h,
            width: w,
            indices: (0..h * w).map(|_| rng.random_range(0..n_cb as u16)).collect(),
        }
    }

    #[test]
    fn two_levels_give_seven_regions_with_face_aware_sizes() {
        let regions = pyramid_regions(2).unwrap();
        assert_eq!(regions.len(), 7);
        let sizes: Vec<_> = regions[1..]
            .iter()
            .map(|r| (r.rect.height(), r.rect.width()))
            .collect();
        assert_eq!(sizes, vec![(30, 50), (30, 50), (60, 50), (60, 50), (30, 50), (30, 50)]);
        assert_eq!(regions[0].area(), 120 * 100);
    }

    #[test]
    fn each_level_tiles_the_face() {
        let regions = pyramid_regions(4).unwrap();
        for level in 0..4 {
            let mut cover = vec![0u8; 120 * 100];
            for r in regions.iter().filter(|r| r.level == level) {
                for y in r.rect.y0..r.rect.y1 {
                    for x in r.rect.x0..r.rect.x1 {
                        cover[y * 100 + x] += 1;
                    }
                }
            }
            assert!(cover.iter().all(|&c| c == 1), "level {level}");
        }
        assert_eq!(regions.iter().filter(|r| r.level == 3).count(), 64);
    }

    #[test]
    fn histogram_with_unit_weights_is_occurrence_histogram() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = random_bovw(12, 10, 8, &mut rng);
        let r = region(2, 3, 7, 9);
        let h = weighted_bovw_histogram(&b, &FisherFace::uniform(12, 10), &r, 8).unwrap();
        let mut counts = vec![0.0; 8];
        for y in 3..9 {
            for x in 2..7 {
                counts[b.get(y, x) as usize] += 1.0;
            }
        }
        for (a, c) in h.iter().zip(&counts) {
            assert!((a - c / 30.0).abs() < 1e-15);
        }
        let zero = weighted_bovw_histogram(&b, &FisherFace::uniform(12, 10).scaled(0.0), &r, 8).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn histogram_hand_evaluated() {
        let b = BovwFace {
            height: 2,
            width: 1,
            indices: vec![3, 5],
        };
        let f = FisherFace {
            height: 2,
            width: 1,
            weights: vec![0.2, 0.8],
        };
        let h = weighted_bovw_histogram(&b, &f, &region(0, 0, 1, 2), 8).unwrap();
        assert!((h[3] - 0.1).abs() < 1e-15);
        assert!((h[5] - 0.4).abs() < 1e-15);
        assert_eq!(h.iter().filter(|&&v| v != 0.0).count(), 2);
    }

    #[test]
    fn region_outside_face_is_rejected() {
        let b = BovwFace {
            height: 2,
            width: 2,
            indices: vec![0; 4],
        };
        let e = weighted_bovw_histogram(&b, &FisherFace::uniform(2, 2), &region(0, 0, 3, 2), 4);
        assert!(matches!(e, Err(Error::Geometry(_))));
    }

    #[test]
    fn class_face_modal_codeword() {
        let mk = |v: Vec<u16>| BovwFace {
            height: 1,
            width: v.len(),
            indices: v,
        };
        let single = class_specific_face(&[mk(vec![4, 1, 9])], ClassTag::Genuine, 10).unwrap();
        assert_eq!(single.indices, vec![4, 1, 9]);
        let three = class_specific_face(&[mk(vec![2, 7]), mk(vec![2, 2]), mk(vec![7, 7])], ClassTag::Fake, 10).unwrap();
        assert_eq!(three.indices, vec![2, 7]);
        let tie = class_specific_face(&[mk(vec![7]), mk(vec![2])], ClassTag::Fake, 10).unwrap();
        assert_eq!(tie.indices, vec![2]);
        assert!(matches!(
            class_specific_face(&[], ClassTag::Fake, 10),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn matching_degree_rules() {
        let raw = matching_degree_raw(&[2.0, 0.0, 0.0, 5.0], &[4.0, 3.0, 0.0, 5.0]);
        assert_eq!(raw, vec![0.5, 0.0, 1.0, 1.0]);
        assert!(raw.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn matching_degree_of_identical_face_is_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = random_bovw(6, 5, 4, &mut rng);
        let csf = ClassSpecificFace {
            height: 6,
            width: 5,
            indices: b.indices.clone(),
            class_tag: ClassTag::Genuine,
        };
        let m = matching_degree(&b, &csf, &FisherFace::uniform(6, 5), &region(0, 0, 5, 6), 4).unwrap();
        assert!(m.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn fisher_scaling_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = random_bovw(120, 100, 16, &mut rng);
        let csf = ClassSpecificFace {
            height: 120,
            width: 100,
            indices: random_bovw(120, 100, 16, &mut rng).indices,
            class_tag: ClassTag::Fake,
        };
        let fisher = FisherFace {
            height: 120,
            width: 100,
            weights: (0..12000).map(|_| rng.random()).collect(),
        };
        let half = fisher.scaled(0.5);
        for r in pyramid_regions(2).unwrap() {
            let a = matching_degree(&b, &csf, &fisher, &r, 16).unwrap();
            let c = matching_degree(&b, &csf, &half, &r, 16).unwrap();
            assert_eq!(a, c);
            let ha = weighted_bovw_histogram(&b, &fisher, &r, 16).unwrap();
            let hc = weighted_bovw_histogram(&b, &half, &r, 16).unwrap();
            for (x, y) in ha.iter().zip(&hc) {
                assert!((x * 0.5 - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn pca_projects_mean_to_zero_and_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<Vec<f64>> = (0..30).map(|_| (0..50).map(|_| rng.random()).collect()).collect();
        let p = pca_fit(&data, 1024).unwrap();
        assert_eq!(p.components(), 29);
        assert_eq!(p.requested, 1024);
        let z = pca_project(&p.mean, &p).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-12));
        for i in 0..p.components() {
            for j in 0..=i {
                let dot: f64 = p.component(i).iter().zip(p.component(j)).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-8);
            }
        }
        assert!(p.explained_variance.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn pca_line_has_one_component() {
        let dir: Vec<f64> = (0..5376).map(|i| ((i % 7) as f64 - 3.0) / 10.0).collect();
        let data: Vec<Vec<f64>> = (0..6)
            .map(|t| dir.iter().map(|d| 0.3 + t as f64 * d).collect())
            .collect();
        let p = pca_fit(&data, 4).unwrap();
        assert_eq!(p.components(), 1);
        let total: f64 = p.explained_variance.iter().sum();
        assert!((p.explained_variance[0] / total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pca_reconstruction_error_nonincreasing_in_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<Vec<f64>> = (0..20).map(|_| (0..12).map(|_| rng.random()).collect()).collect();
        let mut last = f64::INFINITY;
        for k in 1..=12 {
            let p = pca_fit(&data, k).unwrap();
            let err: f64 = data
                .iter()
                .map(|v| {
                    let rec = pca_reconstruct(&pca_project(v, &p).unwrap(), &p);
                    rec.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
                })
                .sum();
            assert!(err <= last + 1e-9, "k={k}: {err} > {last}");
            last = err;
        }
        assert!(last < 1e-18 * 1e6);
    }

    #[test]
    fn pca_needs_two_vectors() {
        assert!(matches!(pca_fit(&[vec![1.0]], 1), Err(Error::InsufficientData(_))));
    }
}
