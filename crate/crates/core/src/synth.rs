//! Synthetic data with known ground truth.
//!
//! Texture images: band-limited Gaussian noise, plus (for the genuine class)
//! a high-pass grain that a recapture would blur away. Stereo scenes: 68
//! landmark sites laid out like a face, placed on a plane or an ellipsoidal
//! relief, posed and projected through a calibrated rig.

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use std::path::{Path, PathBuf};

use crate::classify::Label;
use crate::error::{Error, Result};
use crate::imagecore::{save_gray, GrayImage, FACE_HEIGHT, FACE_WIDTH};
use crate::pipeline::{write_manifest, ManifestEntry};
use crate::tfbd::{CameraCalib, LandmarkPair, NUM_LANDMARKS};

pub const DEFAULT_CUTOFF: f64 = 0.12;
pub const DEFAULT_GRAIN: f64 = 14.0;
const BASE_MEAN: f64 = 128.0;
const BASE_STD: f64 = 32.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextureRecipe {
    pub class_tag: Label,
    /// Radial frequency cutoff of the base noise, cycles per pixel.
    pub cutoff: f64,
    /// Standard deviation of the grain above the cutoff, in gray levels.
    pub grain: f64,
    pub seed: u64,
}

impl TextureRecipe {
    pub fn genuine() -> Self {
        Self {
            class_tag: Label::Genuine,
            cutoff: DEFAULT_CUTOFF,
            grain: DEFAULT_GRAIN,
            seed: 1,
        }
    }

    pub fn attack() -> Self {
        Self {
            class_tag: Label::Attack,
            cutoff: DEFAULT_CUTOFF,
            grain: 0.0,
            seed: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff > 0.0 && self.cutoff <= 0.5) {
            return Err(Error::Config(format!("cutoff {} outside (0, 0.5]", self.cutoff)));
        }
        if !(self.grain >= 0.0 && self.grain.is_finite()) {
            return Err(Error::Config(format!("grain amplitude {} must be >= 0", self.grain)));
        }
        Ok(())
    }
}

/// Radial frequency (cycles/pixel) of FFT bin `(ky, kx)`.
fn radial_freq(ky: usize, kx: usize, h: usize, w: usize) -> f64 {
    let fy = if ky <= h / 2 { ky as f64 } else { ky as f64 - h as f64 } / h as f64;
    let fx = if kx <= w / 2 { kx as f64 } else { kx as f64 - w as f64 } / w as f64;
    (fy * fy + fx * fx).sqrt()
}

/// In-place 2-D FFT of a row-major `h x w` buffer; the inverse is unscaled.
pub fn fft2(data: &mut [Complex<f64>], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    data.chunks_mut(w).for_each(|r| row.process(r));
    let mut column = vec![Complex::default(); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = data[y * w + x];
        }
        col.process(&mut column);
        for y in 0..h {
            data[y * w + x] = column[y];
        }
    }
}

/// White Gaussian noise kept on one side of `cutoff`, scaled to unit variance.
fn filtered_noise(rng: &mut ChaCha8Rng, h: usize, w: usize, cutoff: f64, keep_low: bool) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..h * w)
        .map(|_| Complex::new(StandardNormal.sample(rng), 0.0))
        .collect();
    fft2(&mut buf, h, w, false);
    for ky in 0..h {
        for kx in 0..w {
            let low = radial_freq(ky, kx, h, w) <= cutoff;
            if low != keep_low || (ky == 0 && kx == 0) {
                buf[ky * w + kx] = Complex::default();
            }
        }
    }
    fft2(&mut buf, h, w, true);
    let v: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let var = v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
    let sd = var.sqrt().max(1e-300);
    v.into_iter().map(|x| x / sd).collect()
}

/// One 120x100 texture following `recipe`, driven by `rng`.
pub fn gen_texture(recipe: &TextureRecipe, rng: &mut ChaCha8Rng) -> GrayImage {
    let (h, w) = (FACE_HEIGHT, FACE_WIDTH);
    let base = filtered_noise(rng, h, w, recipe.cutoff, true);
    let grain = filtered_noise(rng, h, w, recipe.cutoff, false);
    let data = base
        .iter()
        .zip(&grain)
        .map(|(b, g)| (BASE_MEAN + BASE_STD * b + recipe.grain * g).round().clamp(0.0, 255.0) as u8)
        .collect();
    GrayImage::new(h, w, data).expect("sizes match")
}

/// `n_per_class` images for every recipe, recipes in order.
pub fn gen_texture_dataset(n_per_class: usize, recipes: &[TextureRecipe], seed: u64) -> Result<Vec<(GrayImage, Label)>> {
    if n_per_class == 0 {
        return Err(Error::Precondition("n_per_class must be >= 1".into()));
    }
    recipes.iter().try_for_each(|r| r.validate())?;
    Ok(recipes
        .iter()
        .flat_map(|r| (0..n_per_class).map(move |i| (r, i)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(r, i)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ r.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            rng.set_stream(i as u64);
            (gen_texture(r, &mut rng), r.class_tag)
        })
        .collect())
}

/// Mean spectral power above `cutoff` (cycles/pixel), mean removed.
pub fn high_frequency_power(img: &GrayImage, cutoff: f64) -> f64 {
    let (h, w) = (img.height(), img.width());
    let mean = img.data().iter().map(|&v| v as f64).sum::<f64>() / (h * w) as f64;
    let mut buf: Vec<Complex<f64>> = img.data().iter().map(|&v| Complex::new(v as f64 - mean, 0.0)).collect();
    fft2(&mut buf, h, w, false);
    let (mut sum, mut n) = (0.0, 0usize);
    for ky in 0..h {
        for kx in 0..w {
            if radial_freq(ky, kx, h, w) > cutoff {
                sum += buf[ky * w + kx].norm_sqr();
                n += 1;
            }
        }
    }
    sum / n.max(1) as f64 / (h * w) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Surface {
    Plane,
    /// Ellipsoidal cap bulging toward the camera by `relief` world units.
    Curved { relief: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    /// Frontal face `distance` units in front of the right camera.
    pub fn frontal(distance: f64) -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::new(0.0, 0.0, distance),
        }
    }

    /// Small random head rotation (radians per axis) and lateral shift.
    pub fn random(rng: &mut ChaCha8Rng, distance: f64, max_angle: f64, max_shift: f64) -> Self {
        let mut a = || rng.random_range(-max_angle..=max_angle);
        let rotation = Rotation3::from_euler_angles(a(), a(), a()).into_inner();
        Self {
            scale: 1.0,
            rotation,
            translation: Vector3::new(
                rng.random_range(-max_shift..=max_shift),
                rng.random_range(-max_shift..=max_shift),
                distance,
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StereoScene {
    pub surface: Surface,
    pub pose: Pose,
    pub noise_px: f64,
    pub calib: CameraCalib,
    /// Frame size (height, width) shared by both cameras.
    pub frame: (usize, usize),
    pub seed: u64,
}

pub const DEFAULT_RELIEF: f64 = 3.0;
pub const DEFAULT_DISTANCE: f64 = 60.0;

impl StereoScene {
    /// Frontal scene with a 640x480 parallel rig, f = 500, 10-unit baseline.
    pub fn standard(surface: Surface, noise_px: f64, seed: u64) -> Self {
        Self {
            surface,
            pose: Pose::frontal(DEFAULT_DISTANCE),
            noise_px,
            calib: CameraCalib::parallel(500.0, 500.0, 320.0, 240.0, 10.0).expect("valid rig"),
            frame: (480, 640),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StereoTruth {
    /// Landmark positions in the right camera frame.
    pub points: Vec<Vector3<f64>>,
    /// `z` minus its mean over the 68 landmarks.
    pub relative_depths: Vec<f64>,
}

fn ellipse(out: &mut Vec<(f64, f64)>, cx: f64, cy: f64, a: f64, b: f64, n: usize) {
    for k in 0..n {
        let t = std::f64::consts::PI - 2.0 * std::f64::consts::PI * k as f64 / n as f64;
        out.push((cx + a * t.cos(), cy - b * t.sin()));
    }
}

/// Face-plane coordinates (x right, y down, world units) of the 68 sites in
/// the usual annotation order: jaw, brows, nose, eyes, outer and inner lips.
pub fn canonical_sites() -> Vec<(f64, f64)> {
    let pi = std::f64::consts::PI;
    let mut s = Vec::with_capacity(NUM_LANDMARKS);
    for k in 0..17 {
        let t = pi * k as f64 / 16.0;
        s.push((-7.0 * t.cos(), -1.0 + 8.5 * t.sin()));
    }
    for side in [-1.0, 1.0] {
        for k in 0..5 {
            let u = k as f64 / 4.0;
            let x = if side < 0.0 { -5.5 + 4.0 * u } else { 1.5 + 4.0 * u };
            s.push((x, -4.5 - 0.8 * (pi * u).sin()));
        }
    }
    for k in 0..4 {
        s.push((0.0, -3.0 + k as f64));
    }
    for k in 0..5 {
        let x = -1.5 + 0.75 * k as f64;
        s.push((x, 1.2 + 0.3 * (1.0 - (x / 1.5).abs())));
    }
    ellipse(&mut s, -3.2, -2.3, 1.3, 0.5, 6);
    ellipse(&mut s, 3.2, -2.3, 1.3, 0.5, 6);
    ellipse(&mut s, 0.0, 4.2, 3.0, 1.2, 12);
    ellipse(&mut s, 0.0, 4.2, 1.8, 0.5, 8);
    debug_assert_eq!(s.len(), NUM_LANDMARKS);
    s
}

/// Relief of the surface at face-plane point `(x, y)`; negative is toward
/// the camera.
pub fn surface_offset(surface: Surface, x: f64, y: f64) -> f64 {
    match surface {
        Surface::Plane => 0.0,
        Surface::Curved { relief } => {
            let q = 1.0 - (x / 9.0).powi(2) - (y / 11.0).powi(2);
            -relief * q.max(0.0).sqrt()
        }
    }
}

pub fn gen_stereo_scene(scene: &StereoScene) -> Result<(LandmarkPair, StereoTruth)> {
    scene.calib.validate()?;
    if !(scene.pose.scale > 0.0) {
        return Err(Error::Config("pose scale must be positive".into()));
    }
    if !(scene.noise_px >= 0.0 && scene.noise_px.is_finite()) {
        return Err(Error::Config("noise must be >= 0".into()));
    }
    let points: Vec<Vector3<f64>> = canonical_sites()
        .into_iter()
        .map(|(x, y)| {
            let local = Vector3::new(x, y, surface_offset(scene.surface, x, y));
            scene.pose.scale * (scene.pose.rotation * local) + scene.pose.translation
        })
        .collect();
    let noise = Normal::new(0.0, scene.noise_px).expect("finite std");
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    let (fh, fw) = (scene.frame.0 as f64, scene.frame.1 as f64);
    let mut left = Vec::with_capacity(NUM_LANDMARKS);
    let mut right = Vec::with_capacity(NUM_LANDMARKS);
    for (j, p) in points.iter().enumerate() {
        if p.z <= 0.0 {
            return Err(Error::Visibility(format!("landmark {j} is behind the camera")));
        }
        let (l, r) = scene.calib.project(p);
        let mut jitter = |(u, v): (f64, f64)| (u + noise.sample(&mut rng), v + noise.sample(&mut rng));
        let (l, r) = (jitter(l), jitter(r));
        for (side, (u, v)) in [("left", l), ("right", r)] {
            if !(u >= 0.0 && u < fw && v >= 0.0 && v < fh) {
                return Err(Error::Visibility(format!(
                    "landmark {j} projects to ({u:.1}, {v:.1}) outside the {side} frame"
                )));
            }
        }
        left.push(l);
        right.push(r);
    }
    let mean = points.iter().map(|p| p.z).sum::<f64>() / NUM_LANDMARKS as f64;
    let relative_depths = points.iter().map(|p| p.z - mean).collect();
    Ok((LandmarkPair { left, right }, StereoTruth { points, relative_depths }))
}

/// Files written by [`write_synthetic_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub manifest: PathBuf,
    pub calibration: Option<PathBuf>,
    pub entries: Vec<ManifestEntry>,
}

/// Write `n_per_class` genuine and attack faces as PNG plus a manifest. With
/// `stereo`, every entry also gets a landmark pair (curved relief for genuine,
/// a plane for attacks, 0.5 px noise) and the rig calibration is saved.
/// Attacks alternate between the "print" and "replay" tags.
pub fn write_synthetic_dataset(dir: impl AsRef<Path>, n_per_class: usize, stereo: bool, seed: u64) -> Result<SyntheticDataset> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let images = gen_texture_dataset(n_per_class, &[TextureRecipe::genuine(), TextureRecipe::attack()], seed)?;
    let calib_scene = StereoScene::standard(Surface::Plane, 0.0, 0);
    let entries = images
        .par_iter()
        .enumerate()
        .map(|(k, (img, label))| {
            let i = k % n_per_class;
            let name = format!("{label}_{i:04}");
            let file = format!("{name}.png");
            save_gray(img, dir.join(&file))?;
            let mut e = ManifestEntry::new(&file, *label);
            e.id = Some(name.clone());
            if !label.is_genuine() {
                e.attack_type = Some(if i.is_multiple_of(2) { "print" } else { "replay" }.to_string());
            }
            if stereo {
                let surface = if label.is_genuine() {
                    Surface::Curved { relief: DEFAULT_RELIEF }
                } else {
                    Surface::Plane
                };
                let scene_seed = seed.wrapping_mul(0x9E37_79B9).wrapping_add(k as u64);
                let (pair, _) = gen_stereo_scene(&StereoScene::standard(surface, 0.5, scene_seed))?;
                let lm = format!("{name}.landmarks.json");
                let text = serde_json::to_string(&pair).expect("pair serializes");
                std::fs::write(dir.join(&lm), text).map_err(|e| Error::io(dir.join(&lm), e))?;
                e.landmark_path = Some(PathBuf::from(lm));
            }
            Ok(e)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = dir.join("manifest.jsonl");
    write_manifest(&manifest, &entries)?;
    let calibration = if stereo {
        let p = dir.join("calibration.json");
        calib_scene.calib.save(&p)?;
        Some(p)
    } else {
        None
    };
    Ok(SyntheticDataset {
        manifest,
        calibration,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tfbd::{abstract_landmarks, build_template, register, RegistrationConfig};

    #[test]
    fn fft_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let orig: Vec<Complex<f64>> = (0..12 * 10).map(|_| Complex::new(rng.random(), 0.0)).collect();
        let mut buf = orig.clone();
        fft2(&mut buf, 12, 10, false);
        fft2(&mut buf, 12, 10, true);
        for (a, b) in orig.iter().zip(&buf) {
            assert!((a.re - b.re / 120.0).abs() < 1e-12);
        }
    }

    #[test]
    fn texture_dataset_is_seeded() {
        let recipes = [TextureRecipe::genuine(), TextureRecipe::attack()];
        let a = gen_texture_dataset(3, &recipes, 5).unwrap();
        let b = gen_texture_dataset(3, &recipes, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
        assert_eq!(a[0].0.height(), 120);
        assert_eq!(a[0].0.width(), 100);
        assert_ne!(a, gen_texture_dataset(3, &recipes, 6).unwrap());
        assert!(gen_texture_dataset(0, &recipes, 5).is_err());
    }

    #[test]
    fn genuine_class_has_more_high_frequency_power() {
        let recipes = [TextureRecipe::genuine(), TextureRecipe::attack()];
        let d = gen_texture_dataset(10, &recipes, 7).unwrap();
        let mean = |label: Label| {
            let v: Vec<f64> = d.iter().filter(|x| x.1 == label).map(|x| high_frequency_power(&x.0, DEFAULT_CUTOFF)).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean(Label::Genuine) > 10.0 * mean(Label::Attack));
    }

    #[test]
    fn zero_grain_classes_match() {
        let g = TextureRecipe { grain: 0.0, ..TextureRecipe::genuine() };
        let a = TextureRecipe { seed: g.seed, ..TextureRecipe::attack() };
        let d = gen_texture_dataset(4, &[g, a], 3).unwrap();
        // same recipe and seed: identical images, only the tag differs
        for i in 0..4 {
            assert_eq!(d[i].0, d[i + 4].0);
        }
    }

    #[test]
    fn sites_are_distinct() {
        let s = canonical_sites();
        assert_eq!(s.len(), 68);
        for i in 0..68 {
            for j in i + 1..68 {
                assert!((s[i].0 - s[j].0).hypot(s[i].1 - s[j].1) > 0.1, "{i} {j}");
            }
        }
    }

    #[test]
    fn planar_scene_has_zero_relative_depth() {
        let (pair, _) = gen_stereo_scene(&StereoScene::standard(Surface::Plane, 0.0, 1)).unwrap();
        let lm = abstract_landmarks(&pair, &StereoScene::standard(Surface::Plane, 0.0, 1).calib).unwrap();
        assert!(lm.iter().all(|l| l.d.abs() < 1e-9));
    }

    #[test]
    fn curved_scene_recovers_relief() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut scene = StereoScene::standard(Surface::Curved { relief: DEFAULT_RELIEF }, 0.0, 1);
        scene.pose = Pose::random(&mut rng, 60.0, 0.2, 3.0);
        let (pair, truth) = gen_stereo_scene(&scene).unwrap();
        let lm = abstract_landmarks(&pair, &scene.calib).unwrap();
        let scale = truth.relative_depths.iter().map(|d| d.abs()).fold(0.0, f64::max);
        for (l, d) in lm.iter().zip(&truth.relative_depths) {
            assert!((l.d - d).abs() <= 1e-8 * scale);
        }
    }

    #[test]
    fn template_source_registers_with_zero_error() {
        let scene = StereoScene::standard(Surface::Curved { relief: DEFAULT_RELIEF }, 0.0, 1);
        let (pair, _) = gen_stereo_scene(&scene).unwrap();
        let template = build_template(std::slice::from_ref(&pair), &scene.calib).unwrap();
        let lm = abstract_landmarks(&pair, &scene.calib).unwrap();
        let r = register(&lm, &template, RegistrationConfig::default()).unwrap();
        assert!(r.mean_error < 1e-18);
    }

    #[test]
    fn visibility_is_checked() {
        let mut scene = StereoScene::standard(Surface::Plane, 0.0, 1);
        scene.pose.translation.x = 40.0;
        assert!(matches!(gen_stereo_scene(&scene), Err(Error::Visibility(_))));
        scene.pose.translation = Vector3::new(0.0, 0.0, -10.0);
        assert!(matches!(gen_stereo_scene(&scene), Err(Error::Visibility(_))));
    }
}
