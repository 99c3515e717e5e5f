//! Training, prediction and evaluation over dataset manifests.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::{cascade_decide, BoxDecision, CascadeConfig, DetectionRecord};
use crate::classify::{
    compute_metrics, fuse_scores, grid_search_mapped, svm_score, svm_train, train_tuned, FeatureMap, GridResult, Label,
    MetricsReport, ScoreRecord, ScoredSample, SvmModel, Threshold, DEFAULT_FOLDS, GRID_C, GRID_GAMMA_FACTORS,
};
use crate::codebook::{encode_bovw, train_codebook, DEFAULT_CODEBOOK_SIZE, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::fisherface::{build_fisher_face, DEFAULT_PAIR_BUDGET};
use crate::imagecore::{crop_by_eyes, load_gray, resize_bilinear, EyeCropSpec, GrayImage, FACE_HEIGHT, FACE_WIDTH};
use crate::modelio::{ByteReader, ByteWriter, ModelFile};
use crate::spmt::{class_specific_face, pca_fit, pca_project, ClassTag, SpmtModel, DEFAULT_LEVELS, DEFAULT_PCA_DIM};
use crate::texture::mslbp_face;
use crate::tfbd::{
    build_template, extract_tfbd, CameraCalib, LandmarkPair, RegistrationConfig, TemplateFace,
    DEFAULT_TEMPLATE_CAPTURES,
};

pub const BUNDLE_VERSION: &str = "facepad-bundle-1";

/// Every tunable of a training or inference run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub pair_budget: usize,
    pub sample_rate: f64,
    pub codebook_size: usize,
    pub levels: usize,
    pub pca_dim: usize,
    pub n_max: usize,
    pub n_min: usize,
    pub reweight: bool,
    pub template_captures: usize,
    pub theta_c: f64,
    pub iou_nms: f64,
    pub iou_conflict: f64,
    pub conflict_rule: bool,
    pub expand_ratio: f64,
    pub fusion_ratio: [f64; 2],
    pub far_level: f64,
    /// Stereo calibration; TFBD components are trained only when set.
    pub calibration: Option<PathBuf>,
    /// Captures for the template face; defaults to the first genuine
    /// entries of the training manifest.
    pub template_manifest: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let reg = RegistrationConfig::default();
        let cas = CascadeConfig::default();
        Self {
            seed: 0,
            pair_budget: DEFAULT_PAIR_BUDGET,
            sample_rate: DEFAULT_SAMPLE_RATE,
            codebook_size: DEFAULT_CODEBOOK_SIZE,
            levels: DEFAULT_LEVELS,
            pca_dim: DEFAULT_PCA_DIM,
            n_max: reg.n_max,
            n_min: reg.n_min,
            reweight: reg.reweight,
            template_captures: DEFAULT_TEMPLATE_CAPTURES,
            theta_c: cas.theta_c,
            iou_nms: cas.iou_nms,
            iou_conflict: cas.iou_conflict,
            conflict_rule: cas.conflict_rule,
            expand_ratio: cas.expand_ratio,
            fusion_ratio: [0.5, 0.5],
            far_level: crate::classify::DEFAULT_FAR_LEVEL,
            calibration: None,
            template_manifest: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn registration(&self) -> RegistrationConfig {
        RegistrationConfig {
            n_max: self.n_max,
            n_min: self.n_min,
            reweight: self.reweight,
        }
    }

    pub fn cascade(&self) -> CascadeConfig {
        CascadeConfig {
            theta_c: self.theta_c,
            iou_nms: self.iou_nms,
            iou_conflict: self.iou_conflict,
            conflict_rule: self.conflict_rule,
            expand_ratio: self.expand_ratio,
        }
    }

    pub fn ratio(&self) -> (f64, f64) {
        (self.fusion_ratio[0], self.fusion_ratio[1])
    }

    pub fn validate(&self) -> Result<()> {
        if self.pair_budget < 1 {
            return Err(Error::Config("pair_budget must be >= 1".into()));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate <= 1.0) {
            return Err(Error::Config(format!("sample_rate {} outside (0, 1]", self.sample_rate)));
        }
        if !(2..=u16::MAX as usize + 1).contains(&self.codebook_size) {
            return Err(Error::Config(format!("codebook_size {} outside [2, 65536]", self.codebook_size)));
        }
        if !(1..=4).contains(&self.levels) {
            return Err(Error::Config(format!("levels {} outside [1, 4]", self.levels)));
        }
        if self.pca_dim < 1 {
            return Err(Error::Config("pca_dim must be >= 1".into()));
        }
        if self.template_captures < 1 {
            return Err(Error::Config("template_captures must be >= 1".into()));
        }
        if !(self.far_level > 0.0 && self.far_level < 1.0) {
            return Err(Error::Config(format!("far_level {} outside (0, 1)", self.far_level)));
        }
        self.registration().validate()?;
        self.cascade().validate()?;
        crate::classify::check_ratio(self.ratio())
    }

    fn stage_seed(&self, stage: u64) -> u64 {
        self.seed.wrapping_mul(0x2545_F491_4F6C_DD1D).wrapping_add(stage)
    }
}

/// One manifest line. Relative paths are resolved against the manifest's
/// directory when loaded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub path: PathBuf,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack_type: Option<String>,
    /// JSON file holding one [`LandmarkPair`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmark_path: Option<PathBuf>,
    /// The other camera's image of a stereo capture.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_path: Option<PathBuf>,
    /// Eye centers `[[x, y], [x, y]]` (left, right); when present the face
    /// is eye-cropped, otherwise the whole image is resized.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eyes: Option<[[f64; 2]; 2]>,
}

impl ManifestEntry {
    pub fn new(path: impl Into<PathBuf>, label: Label) -> Self {
        Self {
            id: None,
            path: path.into(),
            label,
            attack_type: None,
            landmark_path: None,
            pair_path: None,
            eyes: None,
        }
    }

    pub fn sample_id(&self) -> String {
        self.id.clone().unwrap_or_else(|| self.path.display().to_string())
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.path);
        if let Some(p) = self.landmark_path.as_mut() {
            fix(p);
        }
        if let Some(p) = self.pair_path.as_mut() {
            fix(p);
        }
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let mut e: ManifestEntry = serde_json::from_str(l)
                .map_err(|e| Error::Manifest(format!("{}:{}: {e}", path.display(), i + 1)))?;
            e.resolve(base);
            Ok(e)
        })
        .collect()
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    crate::cascade::write_jsonl(path, entries)
}

/// Canonical 120x100 face for an entry.
pub fn load_face(entry: &ManifestEntry) -> Result<GrayImage> {
    let img = load_gray(&entry.path)?;
    prepare_face(&img, entry.eyes)
}

pub fn prepare_face(img: &GrayImage, eyes: Option<[[f64; 2]; 2]>) -> Result<GrayImage> {
    match eyes {
        Some([l, r]) => crop_by_eyes(img, &EyeCropSpec::new((l[0], l[1]), (r[0], r[1]))),
        None if (img.height(), img.width()) == (FACE_HEIGHT, FACE_WIDTH) => Ok(img.clone()),
        None => resize_bilinear(img, FACE_HEIGHT, FACE_WIDTH),
    }
}

pub fn load_landmarks(path: impl AsRef<Path>) -> Result<LandmarkPair> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let pair: LandmarkPair = serde_json::from_str(text.trim())
        .map_err(|e| Error::json(format!("landmarks {}", path.display()), e))?;
    pair.validate()?;
    Ok(pair)
}

fn entry_landmarks(entry: &ManifestEntry) -> Result<LandmarkPair> {
    let p = entry
        .landmark_path
        .as_ref()
        .ok_or_else(|| Error::Manifest(format!("{} has no landmark_path", entry.sample_id())))?;
    load_landmarks(p)
}

/// Stereo half of a bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct TfbdComponents {
    pub calib: CameraCalib,
    pub template: TemplateFace,
    pub registration: RegistrationConfig,
    pub svm: SvmModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub version: String,
    pub spmt: SpmtModel,
    pub spmt_svm: SvmModel,
    pub tfbd: Option<TfbdComponents>,
    pub cascade: CascadeConfig,
    pub fusion_ratio: (f64, f64),
}

fn write_calib(w: &mut ByteWriter, c: &CameraCalib) {
    for m in [&c.left_intrinsics, &c.right_intrinsics, &c.rotation] {
        w.f64s(m.transpose().as_slice());
    }
    w.f64s(c.translation.as_slice());
    w.str(&c.units);
}

fn read_calib(r: &mut ByteReader<'_>) -> Result<CameraCalib> {
    let mut mats = Vec::new();
    for _ in 0..3 {
        let v = r.f64s()?;
        if v.len() != 9 {
            return Err(Error::Format("calibration matrix must have 9 entries".into()));
        }
        mats.push(nalgebra::Matrix3::from_row_slice(&v));
    }
    let t = r.f64s()?;
    if t.len() != 3 {
        return Err(Error::Format("calibration translation must have 3 entries".into()));
    }
    let units = r.str()?;
    CameraCalib::new(mats[0], mats[1], mats[2], nalgebra::Vector3::from_column_slice(&t), units)
}

impl ModelFile for ModelBundle {
    const MAGIC: &'static [u8; 8] = b"FPBUNDLE";

    fn encode_body(&self, w: &mut ByteWriter) {
        w.str(&self.version);
        self.spmt.encode_body(w);
        self.spmt_svm.encode_body(w);
        match &self.tfbd {
            Some(t) => {
                w.u8(1);
                write_calib(w, &t.calib);
                t.template.encode_body(w);
                w.len(t.registration.n_max);
                w.len(t.registration.n_min);
                w.u8(t.registration.reweight as u8);
                t.svm.encode_body(w);
            }
            None => w.u8(0),
        }
        let c = &self.cascade;
        for v in [c.theta_c, c.iou_nms, c.iou_conflict, c.expand_ratio] {
            w.f64(v);
        }
        w.u8(c.conflict_rule as u8);
        w.f64(self.fusion_ratio.0);
        w.f64(self.fusion_ratio.1);
    }

    fn decode_body(r: &mut ByteReader<'_>) -> Result<Self> {
        let version = r.str()?;
        if version != BUNDLE_VERSION {
            return Err(Error::ModelCompatibility(format!(
                "bundle version {version:?}, this build reads {BUNDLE_VERSION:?}"
            )));
        }
        let spmt = SpmtModel::decode_body(r)?;
        let spmt_svm = SvmModel::decode_body(r)?;
        let tfbd = match r.u8()? {
            0 => None,
            1 => {
                let calib = read_calib(r)?;
                let template = TemplateFace::decode_body(r)?;
                let registration = RegistrationConfig {
                    n_max: r.u64()? as usize,
                    n_min: r.u64()? as usize,
                    reweight: r.u8()? != 0,
                };
                let svm = SvmModel::decode_body(r)?;
                Some(TfbdComponents {
                    calib,
                    template,
                    registration,
                    svm,
                })
            }
            t => return Err(Error::Format(format!("bad TFBD flag {t}"))),
        };
        let theta_c = r.f64()?;
        let iou_nms = r.f64()?;
        let iou_conflict = r.f64()?;
        let expand_ratio = r.f64()?;
        let conflict_rule = r.u8()? != 0;
        let fusion_ratio = (r.f64()?, r.f64()?);
        let bundle = Self {
            version,
            spmt,
            spmt_svm,
            tfbd,
            cascade: CascadeConfig {
                theta_c,
                iou_nms,
                iou_conflict,
                conflict_rule,
                expand_ratio,
            },
            fusion_ratio,
        };
        bundle.validate()?;
        Ok(bundle)
    }
}

impl ModelBundle {
    pub fn validate(&self) -> Result<()> {
        let dim = match &self.spmt.pca {
            Some(p) => p.components(),
            None => self.spmt.raw_len()?,
        };
        if self.spmt_svm.feature_dim != dim {
            return Err(Error::ModelCompatibility(format!(
                "SPMT SVM expects {} dims, descriptor has {dim}",
                self.spmt_svm.feature_dim
            )));
        }
        if let Some(t) = &self.tfbd {
            if t.svm.feature_dim != crate::tfbd::NUM_LANDMARKS {
                return Err(Error::ModelCompatibility("TFBD SVM must take 68 depths".into()));
            }
            t.registration.validate()?;
        }
        self.cascade.validate()?;
        crate::classify::check_ratio(self.fusion_ratio)
    }

    pub fn supports(&self, mode: Mode) -> bool {
        match mode {
            Mode::Spmt | Mode::Cascade => true,
            Mode::Tfbd | Mode::Fused => self.tfbd.is_some(),
        }
    }

    fn tfbd(&self) -> Result<&TfbdComponents> {
        self.tfbd
            .as_ref()
            .ok_or_else(|| Error::Mode("bundle was trained without stereo data; TFBD modes unavailable".into()))
    }

    pub fn spmt_score(&self, face: &GrayImage) -> Result<f64> {
        let v = self.spmt.extract(face)?;
        svm_score(&self.spmt_svm, v.features())
    }

    pub fn tfbd_descriptor(&self, pair: &LandmarkPair) -> Result<Vec<f64>> {
        let t = self.tfbd()?;
        Ok(extract_tfbd(pair, &t.calib, &t.template, t.registration)?.descriptor.depths)
    }

    pub fn tfbd_score(&self, pair: &LandmarkPair) -> Result<f64> {
        let d = self.tfbd_descriptor(pair)?;
        svm_score(&self.tfbd()?.svm, &d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Spmt,
    Tfbd,
    Fused,
    Cascade,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spmt" => Ok(Mode::Spmt),
            "tfbd" => Ok(Mode::Tfbd),
            "fused" => Ok(Mode::Fused),
            "cascade" => Ok(Mode::Cascade),
            other => Err(Error::Mode(format!("unknown mode {other:?}"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Spmt => "spmt",
            Mode::Tfbd => "tfbd",
            Mode::Fused => "fused",
            Mode::Cascade => "cascade",
        })
    }
}

impl Mode {
    /// Score at which the mode switches from attack to genuine.
    pub fn operating_threshold(self) -> f64 {
        match self {
            Mode::Fused => 0.5,
            _ => 0.0,
        }
    }
}

/// Cross-validation outcome of the trained classifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub spmt: GridResult,
    pub tfbd: Option<GridResult>,
    pub spmt_dim: usize,
}

fn load_all<T: Send>(entries: &[ManifestEntry], f: impl Fn(&ManifestEntry) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    entries.par_iter().map(f).collect()
}

fn check_classes(entries: &[ManifestEntry]) -> Result<()> {
    let g = entries.iter().filter(|e| e.label.is_genuine()).count();
    if g == 0 || g == entries.len() {
        return Err(Error::Manifest(format!(
            "training needs both classes, got {g} genuine and {} attack",
            entries.len() - g
        )));
    }
    Ok(())
}

pub fn train_all(entries: &[ManifestEntry], cfg: &RunConfig) -> Result<ModelBundle> {
    train_all_with_summary(entries, cfg).map(|(b, _)| b)
}

/// Fisher face, codebook, class-specific faces, PCA and SVM for texture;
/// then template face and SVM for stereo when a calibration is configured.
pub fn train_all_with_summary(entries: &[ManifestEntry], cfg: &RunConfig) -> Result<(ModelBundle, TrainSummary)> {
    cfg.validate()?;
    if entries.is_empty() {
        return Err(Error::Manifest("empty training manifest".into()));
    }
    check_classes(entries)?;
    let calib = match &cfg.calibration {
        Some(p) => {
            let missing: Vec<String> = entries
                .iter()
                .filter(|e| e.landmark_path.is_none())
                .map(|e| e.sample_id())
                .collect();
            if !missing.is_empty() {
                return Err(Error::Manifest(format!(
                    "stereo training requested but {} entries lack landmark_path: {}",
                    missing.len(),
                    missing.join(", ")
                )));
            }
            Some(CameraCalib::load(p)?)
        }
        None => None,
    };

    let faces = load_all(entries, load_face)?;
    let labels: Vec<Label> = entries.iter().map(|e| e.label).collect();
    let class_faces = |want: bool| -> Vec<GrayImage> {
        faces
            .iter()
            .zip(&labels)
            .filter(|(_, l)| l.is_genuine() == want)
            .map(|(f, _)| f.clone())
            .collect()
    };
    let fisher = build_fisher_face(&class_faces(true), &class_faces(false), cfg.pair_budget, cfg.stage_seed(1))?;

    let codes: Vec<_> = faces.par_iter().map(mslbp_face).collect();
    let codebook = train_codebook(&codes, cfg.sample_rate, cfg.codebook_size, cfg.stage_seed(2))?;
    let bovw: Vec<_> = codes.par_iter().map(|c| encode_bovw(c, &codebook)).collect();
    let pick = |want: bool| -> Vec<_> {
        bovw.iter()
            .zip(&labels)
            .filter(|(_, l)| l.is_genuine() == want)
            .map(|(b, _)| b.clone())
            .collect()
    };
    let n_cb = codebook.len();
    let genuine = class_specific_face(&pick(true), ClassTag::Genuine, n_cb)?;
    let fake_csf = class_specific_face(&pick(false), ClassTag::Fake, n_cb)?;
    let mut spmt = SpmtModel {
        levels: cfg.levels,
        codebook,
        fisher,
        genuine,
        fake: fake_csf,
        pca: None,
    };
    let raw: Vec<Vec<f64>> = bovw
        .par_iter()
        .map(|b| spmt.extract_from_bovw(b).map(|v| v.raw))
        .collect::<Result<_>>()?;
    let pca_dim = cfg.pca_dim;
    let fit_pca = move |train: &[Vec<f64>]| -> Result<FeatureMap> {
        let p = pca_fit(train, pca_dim)?;
        Ok(Box::new(move |v: &[f64]| pca_project(v, &p)))
    };
    let spmt_grid = grid_search_mapped(
        &raw,
        &labels,
        &GRID_C,
        &GRID_GAMMA_FACTORS,
        DEFAULT_FOLDS,
        cfg.stage_seed(3),
        &fit_pca,
    )?;
    let pca = pca_fit(&raw, cfg.pca_dim)?;
    let reduced: Vec<Vec<f64>> = raw.iter().map(|v| pca_project(v, &pca)).collect::<Result<_>>()?;
    spmt.pca = Some(pca);
    let spmt_dim = reduced.first().map_or(1, |v| v.len());
    let mut spmt_svm = svm_train(&reduced, &labels, spmt_grid.params(spmt_dim))?;
    spmt_svm.shift_bias(spmt_grid.threshold);

    let (tfbd, tfbd_grid) = match calib {
        Some(calib) => {
            let template = match &cfg.template_manifest {
                Some(p) => {
                    let t_entries = read_manifest(p)?;
                    let pairs = load_all(&t_entries, entry_landmarks)?;
                    build_template(&pairs, &calib)?
                }
                None => {
                    let genuine: Vec<&ManifestEntry> = entries
                        .iter()
                        .filter(|e| e.label.is_genuine())
                        .take(cfg.template_captures)
                        .collect();
                    let pairs = genuine
                        .par_iter()
                        .map(|e| entry_landmarks(e))
                        .collect::<Result<Vec<_>>>()?;
                    build_template(&pairs, &calib)?
                }
            };
            let reg = cfg.registration();
            let depths = load_all(entries, |e| {
                let pair = entry_landmarks(e)?;
                Ok(extract_tfbd(&pair, &calib, &template, reg)?.descriptor.depths)
            })?;
            let (svm, grid) = train_tuned(&depths, &labels, cfg.stage_seed(4))?;
            (
                Some(TfbdComponents {
                    calib,
                    template,
                    registration: reg,
                    svm,
                }),
                Some(grid),
            )
        }
        None => (None, None),
    };
    let bundle = ModelBundle {
        version: BUNDLE_VERSION.to_string(),
        spmt,
        spmt_svm,
        tfbd,
        cascade: cfg.cascade(),
        fusion_ratio: cfg.ratio(),
    };
    bundle.validate()?;
    Ok((
        bundle,
        TrainSummary {
            spmt: spmt_grid,
            tfbd: tfbd_grid,
            spmt_dim,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mode: Mode,
    pub label: Label,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spmt_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tfbd_score: Option<f64>,
}

/// What a single-face prediction needs: the canonical face and, for stereo
/// modes, its landmark pair.
#[derive(Debug, Clone, Default)]
pub struct PredictInput {
    pub face: Option<GrayImage>,
    pub landmarks: Option<LandmarkPair>,
}

impl PredictInput {
    pub fn from_entry(entry: &ManifestEntry, mode: Mode) -> Result<Self> {
        let face = match mode {
            Mode::Spmt | Mode::Fused => Some(load_face(entry)?),
            _ => None,
        };
        let landmarks = match mode {
            Mode::Tfbd | Mode::Fused => Some(entry_landmarks(entry)?),
            _ => None,
        };
        Ok(Self { face, landmarks })
    }
}

/// Score one face in `spmt`, `tfbd` or `fused` mode. Cascade decisions need
/// detector records; see [`predict_cascade`].
pub fn predict(input: &PredictInput, bundle: &ModelBundle, mode: Mode) -> Result<Prediction> {
    if !bundle.supports(mode) {
        return Err(Error::Mode(format!("bundle does not support {mode} mode")));
    }
    let need_face = || {
        input
            .face
            .as_ref()
            .ok_or_else(|| Error::Precondition(format!("{mode} mode needs a face image")))
    };
    let need_pair = || {
        input
            .landmarks
            .as_ref()
            .ok_or_else(|| Error::Precondition(format!("{mode} mode needs a landmark pair")))
    };
    let (score, spmt_score, tfbd_score) = match mode {
        Mode::Spmt => {
            let s = bundle.spmt_score(need_face()?)?;
            (s, Some(s), None)
        }
        Mode::Tfbd => {
            let s = bundle.tfbd_score(need_pair()?)?;
            (s, None, Some(s))
        }
        Mode::Fused => {
            let a = bundle.spmt_score(need_face()?)?;
            let b = bundle.tfbd_score(need_pair()?)?;
            (fuse_scores(a, b, bundle.fusion_ratio)?, Some(a), Some(b))
        }
        Mode::Cascade => {
            return Err(Error::Mode("cascade mode decides detector boxes; use predict_cascade".into()));
        }
    };
    let label = if score >= mode.operating_threshold() {
        Label::Genuine
    } else {
        Label::Attack
    };
    Ok(Prediction {
        mode,
        label,
        score,
        spmt_score,
        tfbd_score,
    })
}

/// Cascade over one full image and its detector records.
pub fn predict_cascade(
    image: &GrayImage,
    records: &[DetectionRecord],
    bundle: &ModelBundle,
    cfg: Option<&CascadeConfig>,
) -> Result<Vec<BoxDecision>> {
    cascade_decide(image, records, cfg.unwrap_or(&bundle.cascade), &bundle.spmt, &bundle.spmt_svm)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdChoice {
    /// The mode's operating threshold (the tuned SVM boundary).
    Operating,
    Eer,
    Fixed(f64),
    DevSet(Vec<ManifestEntry>),
}

/// Scores for every entry, in manifest order.
pub fn score_entries(entries: &[ManifestEntry], bundle: &ModelBundle, mode: Mode) -> Result<Vec<ScoreRecord>> {
    if mode == Mode::Cascade {
        return Err(Error::Mode("evaluate works on face manifests; cascade mode needs detector records".into()));
    }
    if !bundle.supports(mode) {
        return Err(Error::Mode(format!("bundle does not support {mode} mode")));
    }
    entries
        .par_iter()
        .map(|e| {
            let p = predict(&PredictInput::from_entry(e, mode)?, bundle, mode)?;
            Ok(ScoreRecord {
                id: e.sample_id(),
                score: p.score,
                label: e.label,
                attack_type: e.attack_type.clone(),
            })
        })
        .collect()
}

pub fn evaluate(
    entries: &[ManifestEntry],
    bundle: &ModelBundle,
    mode: Mode,
    threshold: &ThresholdChoice,
    far_level: f64,
) -> Result<(MetricsReport, Vec<ScoreRecord>)> {
    if entries.is_empty() {
        return Err(Error::Manifest("empty evaluation manifest".into()));
    }
    let records = score_entries(entries, bundle, mode)?;
    let samples: Vec<ScoredSample> = records.iter().map(ScoreRecord::sample).collect();
    let t = match threshold {
        ThresholdChoice::Operating => Threshold::Fixed(mode.operating_threshold()),
        ThresholdChoice::Eer => Threshold::Eer,
        ThresholdChoice::Fixed(v) => Threshold::Fixed(*v),
        ThresholdChoice::DevSet(dev) => {
            let dev_scores = score_entries(dev, bundle, mode)?;
            Threshold::DevSet(dev_scores.iter().map(ScoreRecord::sample).collect())
        }
    };
    Ok((compute_metrics(&samples, &t, far_level)?, records))
}

/// One line of an extracted-features file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub id: String,
    pub label: Label,
    pub features: Vec<f64>,
}

pub fn extract_spmt_records(entries: &[ManifestEntry], bundle: &ModelBundle, raw: bool) -> Result<Vec<FeatureRecord>> {
    load_all(entries, |e| {
        let v = bundle.spmt.extract(&load_face(e)?)?;
        Ok(FeatureRecord {
            id: e.sample_id(),
            label: e.label,
            features: if raw { v.raw } else { v.features().to_vec() },
        })
    })
}

pub fn extract_tfbd_records(entries: &[ManifestEntry], bundle: &ModelBundle) -> Result<Vec<FeatureRecord>> {
    bundle.tfbd()?;
    load_all(entries, |e| {
        Ok(FeatureRecord {
            id: e.sample_id(),
            label: e.label,
            features: bundle.tfbd_descriptor(&entry_landmarks(e)?)?,
        })
    })
}

/// Template face from the first `captures` genuine entries.
pub fn template_from_manifest(entries: &[ManifestEntry], calib: &CameraCalib, captures: usize) -> Result<TemplateFace> {
    let chosen: Vec<ManifestEntry> = entries
        .iter()
        .filter(|e| e.label.is_genuine())
        .take(captures)
        .cloned()
        .collect();
    if chosen.is_empty() {
        return Err(Error::Manifest("no genuine entries for the template face".into()));
    }
    let pairs = load_all(&chosen, entry_landmarks)?;
    build_template(&pairs, calib)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let text = serde_json::to_string(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        let partial: RunConfig = serde_json::from_str(r#"{"seed": 7}"#).unwrap();
        assert_eq!(partial.seed, 7);
        assert!(serde_json::from_str::<RunConfig>(r#"{"sead": 7}"#).is_err());
    }

    #[test]
    fn config_rejects_bad_values() {
        for c in [
            RunConfig { sample_rate: 0.0, ..Default::default() },
            RunConfig { fusion_ratio: [0.7, 0.7], ..Default::default() },
            RunConfig { n_min: 100, ..Default::default() },
            RunConfig { theta_c: 2.0, ..Default::default() },
            RunConfig { codebook_size: 1, ..Default::default() },
        ] {
            assert!(c.validate().unwrap_err().is_config());
        }
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("fused".parse::<Mode>().unwrap(), Mode::Fused);
        assert!(matches!("stereo".parse::<Mode>(), Err(Error::Mode(_))));
    }

    #[test]
    fn manifest_paths_resolve_against_manifest_dir() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.jsonl");
        std::fs::write(
            &m,
            "{\"path\": \"a.png\", \"label\": \"genuine\", \"landmark_path\": \"a.json\"}\n\n{\"path\": \"/abs/b.png\", \"label\": \"attack\", \"attack_type\": \"print\"}\n",
        )
        .unwrap();
        let e = read_manifest(&m).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e[0].path, dir.path().join("a.png"));
        assert_eq!(e[0].landmark_path.as_ref().unwrap(), &dir.path().join("a.json"));
        assert_eq!(e[1].path, PathBuf::from("/abs/b.png"));
        assert_eq!(e[1].attack_type.as_deref(), Some("print"));
        std::fs::write(&m, "{\"path\": \"a.png\", \"label\": \"real\"}\n").unwrap();
        assert!(matches!(read_manifest(&m), Err(Error::Manifest(_))));
    }
}
