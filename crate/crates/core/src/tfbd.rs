//! Binocular landmark depth and template-face registration.
//!
//! Landmark pixel coordinates are assumed undistorted and rectified. Depth is
//! recovered in the right camera frame; the extrinsics `(R_c, t_c)` map a
//! point from the right camera frame into the left one, `X_l = R_c X_r + t_c`.
//!
//! Each face becomes 68 abstract landmarks `(x, y, d)`: right-image pixel
//! position plus depth relative to the face mean. Registration repeatedly
//! solves a weighted absolute-orientation problem (similarity transform via
//! the unit quaternion of a 4x4 symmetric matrix) against a template face,
//! shrinking the solve to the best-fitting landmarks after the first round.

use std::path::Path;

use nalgebra::{Matrix3, Matrix3x4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modelio::{ByteReader, ByteWriter, ModelFile};

pub const NUM_LANDMARKS: usize = 68;
pub const DEFAULT_TEMPLATE_CAPTURES: usize = 20;
pub const DEFAULT_ROUNDS: usize = 20;
pub const DEFAULT_POOL: usize = 30;

const DEPTH_EPS: f64 = 1e-9;
const ERROR_FLOOR: f64 = 0.01;
const MIN_WEIGHT: f64 = 0.1;
const JACOBI_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CameraCalib {
    pub left_intrinsics: Matrix3<f64>,
    pub right_intrinsics: Matrix3<f64>,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    /// Unit of `translation` and of recovered depth, e.g. "cm".
    pub units: String,
}

/// On-disk calibration layout (JSON).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibFile {
    pub units: String,
    pub left_intrinsics: [[f64; 3]; 3],
    pub right_intrinsics: [[f64; 3]; 3],
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

fn mat(rows: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| rows[i][j])
}

fn rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [0, 1, 2].map(|i| [0, 1, 2].map(|j| m[(i, j)]))
}

impl CameraCalib {
    pub fn new(
        left_intrinsics: Matrix3<f64>,
        right_intrinsics: Matrix3<f64>,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        units: impl Into<String>,
    ) -> Result<Self> {
        let c = Self {
            left_intrinsics,
            right_intrinsics,
            rotation,
            translation,
            units: units.into(),
        };
        c.validate()?;
        Ok(c)
    }

    /// Two identical pinhole cameras; the left one sits `baseline` units to
    /// the right of the right camera along +x (so `t_c = [-baseline, 0, 0]`).
    pub fn parallel(fx: f64, fy: f64, cx: f64, cy: f64, baseline: f64) -> Result<Self> {
        let k = Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0);
        Self::new(k, k, Matrix3::identity(), Vector3::new(-baseline, 0.0, 0.0), "cm")
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        if ortho > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(
                "extrinsic rotation is not orthonormal with det +1".into(),
            ));
        }
        for (side, k) in [("left", &self.left_intrinsics), ("right", &self.right_intrinsics)] {
            if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) {
                return Err(Error::Config(format!("{side} focal lengths must be positive")));
            }
        }
        if self.left_intrinsics.iter().chain(self.right_intrinsics.iter()).chain(self.translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Config("calibration has non-finite entries".into()));
        }
        Ok(())
    }

    /// `M = M_l [R_c t_c]`, the 3x4 projection of right-frame points into the left image.
    pub fn left_projection(&self) -> Matrix3x4<f64> {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        rt.set_column(3, &self.translation);
        self.left_intrinsics * rt
    }

    /// Pixel coordinates of a right-frame point in the (left, right) images.
    pub fn project(&self, p: &Vector3<f64>) -> ((f64, f64), (f64, f64)) {
        let l = self.left_projection() * p.push(1.0);
        let r = self.right_intrinsics * p;
        ((l.x / l.z, l.y / l.z), (r.x / r.z, r.y / r.z))
    }

    pub fn to_file(&self) -> CalibFile {
        CalibFile {
            units: self.units.clone(),
            left_intrinsics: rows(&self.left_intrinsics),
            right_intrinsics: rows(&self.right_intrinsics),
            rotation: rows(&self.rotation),
            translation: [self.translation.x, self.translation.y, self.translation.z],
        }
    }

    pub fn from_file(f: &CalibFile) -> Result<Self> {
        Self::new(
            mat(&f.left_intrinsics),
            mat(&f.right_intrinsics),
            mat(&f.rotation),
            Vector3::from(f.translation),
            f.units.clone(),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f: CalibFile = serde_json::from_str(&text)
            .map_err(|e| Error::json(format!("calibration {}", path.display()), e))?;
        Self::from_file(&f)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.to_file()).expect("calibration serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Depth `z` (right camera frame) of one landmark seen at `left` and `right`.
pub fn landmark_depth(left: (f64, f64), right: (f64, f64), calib: &CameraCalib) -> Result<f64> {
    let m = calib.left_projection();
    let (ul, vl) = left;
    let (ur, _) = right;
    let b1 = |j: usize| m[(0, j)] - m[(2, j)] * ul;
    let b2 = |j: usize| m[(1, j)] - m[(2, j)] * vl;
    let rhs1 = m[(2, 3)] * ul - m[(0, 3)];
    let rhs2 = m[(2, 3)] * vl - m[(1, 3)];
    let k = &calib.right_intrinsics;
    let a = (ur - k[(0, 2)]) / k[(0, 0)];
    let num = b1(1) * rhs2 - b2(1) * rhs1;
    let t1 = a * (b1(1) * b2(0) - b1(0) * b2(1));
    let t2 = b1(1) * b2(2) - b2(1) * b1(2);
    let den = t1 + t2;
    let scale = (a * b1(1) * b2(0)).abs()
        + (a * b1(0) * b2(1)).abs()
        + (b1(1) * b2(2)).abs()
        + (b2(1) * b1(2)).abs();
    let z = num / den;
    if den.abs() <= DEPTH_EPS * scale.max(1.0) || !z.is_finite() || z <= 0.0 {
        return Err(Error::DegenerateGeometry(format!(
            "depth {z:e} (denominator {den:e}) at left ({ul}, {vl}), right u {ur}"
        )));
    }
    Ok(z)
}

/// 68 left/right pixel positions in the standard 68-landmark order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkPair {
    pub left: Vec<(f64, f64)>,
    pub right: Vec<(f64, f64)>,
}

impl LandmarkPair {
    pub fn validate(&self) -> Result<()> {
        if self.left.len() != NUM_LANDMARKS || self.right.len() != NUM_LANDMARKS {
            return Err(Error::Dimension(format!(
                "landmark pair has {}/{} points, expected {NUM_LANDMARKS}",
                self.left.len(),
                self.right.len()
            )));
        }
        if self
            .left
            .iter()
            .chain(&self.right)
            .any(|(u, v)| !u.is_finite() || !v.is_finite())
        {
            return Err(Error::Dimension("non-finite landmark coordinate".into()));
        }
        Ok(())
    }
}

/// Read one pair per non-empty line.
pub fn read_landmark_pairs(path: impl AsRef<Path>) -> Result<Vec<LandmarkPair>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let p: LandmarkPair = serde_json::from_str(l)
                .map_err(|e| Error::json(format!("{}:{}", path.display(), i + 1), e))?;
            p.validate()?;
            Ok(p)
        })
        .collect()
}

pub fn write_landmark_pairs(path: impl AsRef<Path>, pairs: &[LandmarkPair]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for p in pairs {
        text.push_str(&serde_json::to_string(p).expect("pair serializes"));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `(x, y)` in right-image pixels and depth `d` relative to the face mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbstractLandmark {
    pub x: f64,
    pub y: f64,
    pub d: f64,
}

impl AbstractLandmark {
    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.d)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self {
            x: v.x,
            y: v.y,
            d: v.z,
        }
    }
}

pub fn abstract_landmarks(pair: &LandmarkPair, calib: &CameraCalib) -> Result<Vec<AbstractLandmark>> {
    pair.validate()?;
    let depths = pair
        .left
        .iter()
        .zip(&pair.right)
        .enumerate()
        .map(|(index, (&l, &r))| {
            landmark_depth(l, r, calib).map_err(|e| Error::Landmark {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = depths.iter().sum::<f64>() / depths.len() as f64;
    Ok(pair
        .right
        .iter()
        .zip(&depths)
        .map(|(&(x, y), z)| AbstractLandmark { x, y, d: z - mean })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateFace {
    pub landmarks: Vec<AbstractLandmark>,
}

impl TemplateFace {
    pub fn new(landmarks: Vec<AbstractLandmark>) -> Result<Self> {
        if landmarks.len() != NUM_LANDMARKS {
            return Err(Error::Dimension(format!(
                "template has {} landmarks, expected {NUM_LANDMARKS}",
                landmarks.len()
            )));
        }
        if landmarks.iter().any(|l| !(l.x.is_finite() && l.y.is_finite() && l.d.is_finite())) {
            return Err(Error::Dimension("template has non-finite entries".into()));
        }
        Ok(Self { landmarks })
    }

    pub fn depths(&self) -> Vec<f64> {
        self.landmarks.iter().map(|l| l.d).collect()
    }
}

impl ModelFile for TemplateFace {
    const MAGIC: &'static [u8; 8] = b"FPTMPLFC";

    fn encode_body(&self, w: &mut ByteWriter) {
        let flat: Vec<f64> = self.landmarks.iter().flat_map(|l| [l.x, l.y, l.d]).collect();
        w.f64s(&flat);
    }

    fn decode_body(r: &mut ByteReader<'_>) -> Result<Self> {
        let flat = r.f64s()?;
        if flat.len() % 3 != 0 {
            return Err(Error::Format("template length not a multiple of 3".into()));
        }
        Self::new(
            flat.chunks(3)
                .map(|c| AbstractLandmark {
                    x: c[0],
                    y: c[1],
                    d: c[2],
                })
                .collect(),
        )
    }
}

/// Per-landmark mean of the abstract landmarks of several frontal captures.
pub fn build_template(pairs: &[LandmarkPair], calib: &CameraCalib) -> Result<TemplateFace> {
    if pairs.is_empty() {
        return Err(Error::InsufficientData("no captures for the template face".into()));
    }
    let mut failures = Vec::new();
    let mut sets = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        match abstract_landmarks(p, calib) {
            Ok(s) => sets.push(s),
            Err(e) => failures.push(format!("capture {i}: {e}")),
        }
    }
    if !failures.is_empty() {
        return Err(Error::InsufficientData(format!(
            "depth recovery failed for {} capture(s): {}",
            failures.len(),
            failures.join("; ")
        )));
    }
    let n = sets.len() as f64;
    let landmarks = (0..NUM_LANDMARKS)
        .map(|j| {
            let (sx, sy, sd) = sets.iter().fold((0.0, 0.0, 0.0), |acc, s| {
                (acc.0 + s[j].x, acc.1 + s[j].y, acc.2 + s[j].d)
            });
            AbstractLandmark {
                x: sx / n,
                y: sy / n,
                d: sd / n,
            }
        })
        .collect();
    TemplateFace::new(landmarks)
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues and the matching unit eigenvectors (as columns of the
/// returned row-major matrix), unsorted.
pub fn jacobi_eigen<const N: usize>(mut a: [[f64; N]; N]) -> ([f64; N], [[f64; N]; N]) {
    let mut v = [[0.0; N]; N];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let scale = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
    for _sweep in 0..100 {
        let off: f64 = (0..N)
            .flat_map(|i| (0..N).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum::<f64>()
            .sqrt();
        if off <= JACOBI_TOL * scale {
            break;
        }
        for p in 0..N {
            for q in p + 1..N {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..N {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..N {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut values = [0.0; N];
    for (i, val) in values.iter_mut().enumerate() {
        *val = a[i][i];
    }
    (values, v)
}

/// Rotation matrix of a unit quaternion `(q0, qx, qy, qz)`.
pub fn quaternion_to_rotation(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        w * w + x * x - y * y - z * z,
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (y * x + w * z),
        w * w - x * x + y * y - z * z,
        2.0 * (y * z - w * x),
        2.0 * (z * x - w * y),
        2.0 * (z * y + w * x),
        w * w - x * x - y * y + z * z,
    )
}

/// Similarity transform `p -> scale * R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub quaternion: [f64; 4],
}

impl Similarity {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            quaternion: [1.0, 0.0, 0.0, 0.0],
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }
}

fn centroid(points: &[Vector3<f64>]) -> Vector3<f64> {
    points.iter().sum::<Vector3<f64>>() / points.len() as f64
}

/// Closed-form similarity between pre-weighted point sets.
///
/// `source` and `target` are the weighted points `w_j p_j` and `w_j T_j`;
/// `mean_weight` is the average weight, which undoes the weighting of the
/// translation.
pub fn horn_solve(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
    mean_weight: f64,
) -> Result<Similarity> {
    if source.len() != target.len() {
        return Err(Error::Dimension(format!(
            "{} source vs {} target points",
            source.len(),
            target.len()
        )));
    }
    if source.len() < 3 {
        return Err(Error::DegenerateConfiguration(format!(
            "{} points, need at least 3",
            source.len()
        )));
    }
    if !(mean_weight > 0.0) {
        return Err(Error::DegenerateConfiguration(format!(
            "mean weight {mean_weight} must be positive"
        )));
    }
    let ps = centroid(source);
    let ts = centroid(target);
    let sc: Vec<Vector3<f64>> = source.iter().map(|p| p - ps).collect();
    let tc: Vec<Vector3<f64>> = target.iter().map(|t| t - ts).collect();

    let mut spread = [[0.0; 3]; 3];
    for p in &sc {
        for i in 0..3 {
            for j in 0..3 {
                spread[i][j] += p[i] * p[j];
            }
        }
    }
    let (ev, _) = jacobi_eigen(spread);
    let mut ev = ev;
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 0.0) || ev[1] <= 1e-12 * ev[0] {
        return Err(Error::DegenerateConfiguration(
            "source points are coincident or collinear".into(),
        ));
    }

    // S_ab = Σ source_a * target_b
    let mut s = Matrix3::<f64>::zeros();
    for (p, t) in sc.iter().zip(&tc) {
        s += p * t.transpose();
    }
    let (sxx, sxy, sxz) = (s[(0, 0)], s[(0, 1)], s[(0, 2)]);
    let (syx, syy, syz) = (s[(1, 0)], s[(1, 1)], s[(1, 2)]);
    let (szx, szy, szz) = (s[(2, 0)], s[(2, 1)], s[(2, 2)]);
    let n = [
        [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
        [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
        [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
        [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
    ];
    let (values, vectors) = jacobi_eigen(n);
    let best = (0..4).fold(0, |b, i| if values[i] > values[b] { i } else { b });
    let mut q = [0, 1, 2, 3].map(|r| vectors[r][best]);
    let norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    q.iter_mut().for_each(|x| *x /= norm);
    let pivot = (0..4).fold(0, |b, i| if q[i].abs() > q[b].abs() { i } else { b });
    if q[pivot] < 0.0 {
        q.iter_mut().for_each(|x| *x = -*x);
    }
    let rotation = quaternion_to_rotation(q);

    let num: f64 = sc.iter().zip(&tc).map(|(p, t)| t.dot(&(rotation * p))).sum();
    let den: f64 = sc.iter().map(|p| p.norm_squared()).sum();
    let scale = num / den;
    let translation = (ts - scale * (rotation * ps)) / mean_weight;
    Ok(Similarity {
        scale,
        rotation,
        translation,
        quaternion: q,
    })
}

/// Solve the weighted problem `min Σ w_j² ‖T_j − s R p_j − t‖²` through
/// [`horn_solve`] on the weighted points.
pub fn weighted_horn(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
    weights: &[f64],
) -> Result<Similarity> {
    if weights.len() != source.len() {
        return Err(Error::Dimension("one weight per point required".into()));
    }
    let ws: Vec<_> = source.iter().zip(weights).map(|(p, w)| p * *w).collect();
    let wt: Vec<_> = target.iter().zip(weights).map(|(t, w)| t * *w).collect();
    let mean = weights.iter().sum::<f64>() / weights.len() as f64;
    horn_solve(&ws, &wt, mean)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationConfig {
    pub n_max: usize,
    pub n_min: usize,
    /// Apply the logit hard-example weighting to the next pool. With this off
    /// every pool member keeps unit weight.
    pub reweight: bool,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            n_max: DEFAULT_ROUNDS,
            n_min: DEFAULT_POOL,
            reweight: true,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_max < 1 {
            return Err(Error::Config("at least one registration round is required".into()));
        }
        if !(3..=NUM_LANDMARKS).contains(&self.n_min) {
            return Err(Error::Config(format!(
                "pool size {} outside 3..={NUM_LANDMARKS}",
                self.n_min
            )));
        }
        Ok(())
    }
}

/// State after a registration round.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationState {
    pub round: usize,
    pub landmarks: Vec<AbstractLandmark>,
    /// Pool for the next round, ordered by ascending error.
    pub pool: Vec<usize>,
    /// Weights of the pool members, aligned with `pool`.
    pub weights: Vec<f64>,
    /// Normalized per-landmark errors of this round, in `[0.01, 0.99]`.
    pub errors: Vec<f64>,
    /// Raw squared distances to the template.
    pub raw_errors: Vec<f64>,
    pub transform: Similarity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfbdVector {
    pub depths: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    pub descriptor: TfbdVector,
    /// Mean raw squared error to the template after the final round.
    pub mean_error: f64,
    /// Mean raw squared error after each round.
    pub history: Vec<f64>,
    pub state: RegistrationState,
}

/// Errors divided by `(max + 1e-12)` and clamped to `[0.01, 0.99]`.
pub fn normalize_errors(raw: &[f64]) -> Vec<f64> {
    let max = raw.iter().copied().fold(0.0, f64::max);
    raw.iter()
        .map(|e| (e / (max + 1e-12)).clamp(ERROR_FLOOR, 1.0 - ERROR_FLOOR))
        .collect()
}

/// Logit weights, shifted so the smallest is 0.1, then rescaled to mean 1.
pub fn pool_weights(normalized_errors: &[f64]) -> Vec<f64> {
    let logits: Vec<f64> = normalized_errors.iter().map(|e| (e / (1.0 - e)).ln()).collect();
    let min = logits.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = logits.iter().map(|w| w - min + MIN_WEIGHT).collect();
    let mean = shifted.iter().sum::<f64>() / shifted.len() as f64;
    shifted.iter().map(|w| w / mean).collect()
}

pub fn register(
    landmarks: &[AbstractLandmark],
    template: &TemplateFace,
    cfg: RegistrationConfig,
) -> Result<Registration> {
    cfg.validate()?;
    if landmarks.len() != NUM_LANDMARKS {
        return Err(Error::Dimension(format!(
            "{} landmarks, expected {NUM_LANDMARKS}",
            landmarks.len()
        )));
    }
    let targets: Vec<Vector3<f64>> = template.landmarks.iter().map(|l| l.to_vector()).collect();
    let mut current: Vec<Vector3<f64>> = landmarks.iter().map(|l| l.to_vector()).collect();
    let mut pool: Vec<usize> = (0..NUM_LANDMARKS).collect();
    let mut weights = vec![1.0; NUM_LANDMARKS];
    let mut history = Vec::with_capacity(cfg.n_max);
    let mut state = None;

    for round in 1..=cfg.n_max {
        let src: Vec<_> = pool.iter().map(|&j| current[j]).collect();
        let tgt: Vec<_> = pool.iter().map(|&j| targets[j]).collect();
        let transform = weighted_horn(&src, &tgt, &weights).map_err(|e| Error::Registration {
            round,
            source: Box::new(e),
        })?;
        current.iter_mut().for_each(|p| *p = transform.apply(p));
        let raw: Vec<f64> = current
            .iter()
            .zip(&targets)
            .map(|(p, t)| (t - p).norm_squared())
            .collect();
        history.push(raw.iter().sum::<f64>() / NUM_LANDMARKS as f64);
        let normalized = normalize_errors(&raw);

        let mut order: Vec<usize> = (0..NUM_LANDMARKS).collect();
        order.sort_by(|&a, &b| normalized[a].total_cmp(&normalized[b]).then(a.cmp(&b)));
        pool = order[..cfg.n_min].to_vec();
        let pool_errors: Vec<f64> = pool.iter().map(|&j| normalized[j]).collect();
        weights = if cfg.reweight {
            pool_weights(&pool_errors)
        } else {
            vec![1.0; pool.len()]
        };
        state = Some(RegistrationState {
            round,
            landmarks: current.iter().map(AbstractLandmark::from_vector).collect(),
            pool: pool.clone(),
            weights: weights.clone(),
            errors: normalized,
            raw_errors: raw,
            transform,
        });
    }
    let state = state.expect("n_max >= 1");
    Ok(Registration {
        descriptor: TfbdVector {
            depths: current.iter().map(|p| p.z).collect(),
        },
        mean_error: *history.last().expect("n_max >= 1"),
        history,
        state,
    })
}

/// Abstract landmarks of a stereo capture registered to the template.
pub fn extract_tfbd(
    pair: &LandmarkPair,
    calib: &CameraCalib,
    template: &TemplateFace,
    cfg: RegistrationConfig,
) -> Result<Registration> {
    register(&abstract_landmarks(pair, calib)?, template, cfg)
}
