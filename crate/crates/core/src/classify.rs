//! Kernel SVM, score fusion and PAD metrics.
//!
//! The SVM is a C-SVC solved by sequential minimal optimization with
//! second-order working-set selection. Features are standardized per
//! dimension before kerneling. Decision values are positive for genuine
//! presentations.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modelio::{ByteReader, ByteWriter, ModelFile};

pub const DEFAULT_KKT_TOL: f64 = 1e-3;
pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_FAR_LEVEL: f64 = 0.01;
pub const GRID_C: [f64; 4] = [0.1, 1.0, 10.0, 100.0];
/// RBF widths as multiples of `1/d`.
pub const GRID_GAMMA_FACTORS: [f64; 3] = [1.0, 10.0, 0.1];

const TAU: f64 = 1e-12;
const MIN_SCALE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Genuine,
    Attack,
}

impl Label {
    pub fn is_genuine(self) -> bool {
        self == Label::Genuine
    }

    fn sign(self) -> f64 {
        if self.is_genuine() {
            1.0
        } else {
            -1.0
        }
    }

    pub fn from_score(score: f64) -> Self {
        if score >= 0.0 {
            Label::Genuine
        } else {
            Label::Attack
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Genuine => "genuine",
            Label::Attack => "attack",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams {
    pub kernel: Kernel,
    pub c: f64,
    pub tol: f64,
}

impl SvmParams {
    pub fn new(kernel: Kernel, c: f64) -> Self {
        Self {
            kernel,
            c,
            tol: DEFAULT_KKT_TOL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("penalty C = {} must be positive", self.c)));
        }
        if let Kernel::Rbf { gamma } = self.kernel {
            if !(gamma > 0.0 && gamma.is_finite()) {
                return Err(Error::Config(format!("gamma = {gamma} must be positive")));
            }
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("KKT tolerance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub kernel: Kernel,
    pub c: f64,
    pub feature_dim: usize,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Standardized support vectors, one per row.
    pub support_vectors: Vec<Vec<f64>>,
    /// `α_i y_i` for each support vector.
    pub dual_coef: Vec<f64>,
    pub bias: f64,
}

impl SvmModel {
    fn standardize(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    /// Move the decision boundary so that raw value `threshold` maps to 0.
    pub fn shift_bias(&mut self, threshold: f64) {
        self.bias -= threshold;
    }
}

/// Solve the C-SVC dual on labeled vectors.
pub fn svm_train(features: &[Vec<f64>], labels: &[Label], params: SvmParams) -> Result<SvmModel> {
    params.validate()?;
    if features.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} vectors but {} labels",
            features.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|l| l.is_genuine()).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::Training("both classes must be present".into()));
    }
    let dim = features[0].len();
    if dim == 0 || features.iter().any(|f| f.len() != dim) {
        return Err(Error::Dimension("inconsistent or empty feature vectors".into()));
    }
    if features.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Training("non-finite feature value".into()));
    }
    let n = features.len();
    let mut mean = vec![0.0; dim];
    for f in features {
        mean.iter_mut().zip(f).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut scale = vec![0.0; dim];
    for f in features {
        for ((s, x), m) in scale.iter_mut().zip(f).zip(&mean) {
            *s += (x - m) * (x - m);
        }
    }
    scale.iter_mut().for_each(|s| {
        let sd = (*s / n as f64).sqrt();
        *s = if sd > MIN_SCALE { sd } else { 1.0 };
    });
    let xs: Vec<Vec<f64>> = features
        .iter()
        .map(|f| f.iter().zip(&mean).zip(&scale).map(|((x, m), s)| (x - m) / s).collect())
        .collect();
    let y: Vec<f64> = labels.iter().map(|l| l.sign()).collect();
    let kernel = params.kernel;
    let k: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| kernel.eval(&xs[i], &xs[j])).collect())
        .collect();

    let (alpha, bias) = smo(&k, &y, params.c, params.tol);
    let mut support_vectors = Vec::new();
    let mut dual_coef = Vec::new();
    for i in 0..n {
        if alpha[i] > 0.0 {
            support_vectors.push(xs[i].clone());
            dual_coef.push(alpha[i] * y[i]);
        }
    }
    Ok(SvmModel {
        kernel,
        c: params.c,
        feature_dim: dim,
        mean,
        scale,
        support_vectors,
        dual_coef,
        bias,
    })
}

/// Returns `(alpha, bias)` for `f(x) = Σ α_i y_i K(x_i, x) + bias`.
fn smo(k: &[Vec<f64>], y: &[f64], c: f64, tol: f64) -> (Vec<f64>, f64) {
    let n = y.len();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let max_iter = (100 * n).max(10_000_000);
    let up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);

    for _ in 0..max_iter {
        let mut i = usize::MAX;
        let mut gmax = f64::NEG_INFINITY;
        for t in 0..n {
            if up(alpha[t], y[t]) && -y[t] * grad[t] >= gmax
                && (-y[t] * grad[t] > gmax || i == usize::MAX) {
                    gmax = -y[t] * grad[t];
                    i = t;
                }
        }
        let mut j = usize::MAX;
        let mut gmin = f64::INFINITY;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !low(alpha[t], y[t]) {
                continue;
            }
            let v = -y[t] * grad[t];
            gmin = gmin.min(v);
            if i != usize::MAX {
                let b = gmax - v;
                if b > 0.0 {
                    let a = (k[i][i] + k[t][t] - 2.0 * k[i][t]).max(TAU);
                    let obj = -(b * b) / a;
                    if obj < best {
                        best = obj;
                        j = t;
                    }
                }
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < tol {
            break;
        }

        let (ai, aj) = (alpha[i], alpha[j]);
        let qij = y[i] * y[j] * k[i][j];
        if y[i] != y[j] {
            let quad = (k[i][i] + k[j][j] + 2.0 * qij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (k[i][i] + k[j][j] - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - ai, alpha[j] - aj);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * k[t][i] * di + y[j] * k[t][j] * dj);
        }
    }

    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum_free) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    let rho = if free > 0 {
        sum_free / free as f64
    } else {
        (ub + lb) / 2.0
    };
    (alpha, -rho)
}

/// Signed decision value, positive for genuine.
pub fn svm_score(model: &SvmModel, vector: &[f64]) -> Result<f64> {
    if vector.len() != model.feature_dim {
        return Err(Error::Dimension(format!(
            "vector has {} dims, model expects {}",
            vector.len(),
            model.feature_dim
        )));
    }
    let x = model.standardize(vector);
    let s: f64 = model
        .support_vectors
        .iter()
        .zip(&model.dual_coef)
        .map(|(sv, c)| c * model.kernel.eval(sv, &x))
        .sum();
    Ok(s + model.bias)
}

pub fn svm_score_batch(model: &SvmModel, vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    vectors.par_iter().map(|v| svm_score(model, v)).collect()
}

impl ModelFile for SvmModel {
    const MAGIC: &'static [u8; 8] = b"FPSVMMDL";

    fn encode_body(&self, w: &mut ByteWriter) {
        match self.kernel {
            Kernel::Linear => {
                w.u8(0);
                w.f64(0.0);
            }
            Kernel::Rbf { gamma } => {
                w.u8(1);
                w.f64(gamma);
            }
        }
        w.f64(self.c);
        w.len(self.feature_dim);
        w.f64s(&self.mean);
        w.f64s(&self.scale);
        w.len(self.support_vectors.len());
        self.support_vectors.iter().for_each(|sv| w.f64s(sv));
        w.f64s(&self.dual_coef);
        w.f64(self.bias);
    }

    fn decode_body(r: &mut ByteReader<'_>) -> Result<Self> {
        let tag = r.u8()?;
        let gamma = r.f64()?;
        let kernel = match tag {
            0 => Kernel::Linear,
            1 => Kernel::Rbf { gamma },
            t => return Err(Error::Format(format!("unknown kernel tag {t}"))),
        };
        let c = r.f64()?;
        let feature_dim = r.len()?;
        let mean = r.f64s()?;
        let scale = r.f64s()?;
        let n_sv = r.len()?;
        let support_vectors = (0..n_sv).map(|_| r.f64s()).collect::<Result<Vec<_>>>()?;
        let dual_coef = r.f64s()?;
        let bias = r.f64()?;
        if mean.len() != feature_dim
            || scale.len() != feature_dim
            || dual_coef.len() != n_sv
            || support_vectors.iter().any(|s| s.len() != feature_dim)
        {
            return Err(Error::Format("inconsistent SVM model dimensions".into()));
        }
        Ok(Self {
            kernel,
            c,
            feature_dim,
            mean,
            scale,
            support_vectors,
            dual_coef,
            bias,
        })
    }
}

/// Stratified folds: each sample index assigned to one of `k` folds.
pub fn stratified_folds(labels: &[Label], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; labels.len()];
    for class in [Label::Genuine, Label::Attack] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            fold[i] = pos % k;
        }
    }
    fold
}

/// Per-fold feature transform, fitted on the training part of each fold so
/// that held-out samples never influence it (e.g. PCA).
pub type FeatureMap = Box<dyn Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync>;
pub type FitMap<'a> = &'a (dyn Fn(&[Vec<f64>]) -> Result<FeatureMap> + Sync);

fn identity_map(_: &[Vec<f64>]) -> Result<FeatureMap> {
    Ok(Box::new(|v: &[f64]| Ok(v.to_vec())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub c: f64,
    /// RBF width as a multiple of `1/d`, `d` the (mapped) feature dimension.
    pub gamma_factor: f64,
    pub cv_accuracy: f64,
    /// Operating threshold on raw decision values, minimizing |FAR - FRR|
    /// over the out-of-fold scores of the chosen setting.
    pub threshold: f64,
}

impl GridResult {
    pub fn params(&self, dim: usize) -> SvmParams {
        SvmParams::new(
            Kernel::Rbf {
                gamma: self.gamma_factor / dim.max(1) as f64,
            },
            self.c,
        )
    }
}

/// Grid over `C` and RBF widths scored by k-fold accuracy; the first best
/// setting in grid order wins.
pub fn grid_search(
    features: &[Vec<f64>],
    labels: &[Label],
    c_grid: &[f64],
    gamma_factors: &[f64],
    k: usize,
    seed: u64,
) -> Result<GridResult> {
    grid_search_mapped(features, labels, c_grid, gamma_factors, k, seed, &identity_map)
}

#[allow(clippy::too_many_arguments)]
pub fn grid_search_mapped(
    features: &[Vec<f64>],
    labels: &[Label],
    c_grid: &[f64],
    gamma_factors: &[f64],
    k: usize,
    seed: u64,
    fit_map: FitMap<'_>,
) -> Result<GridResult> {
    let counts = [Label::Genuine, Label::Attack].map(|c| labels.iter().filter(|&&l| l == c).count());
    if k < 2 || counts.iter().any(|&n| n < k) {
        return Err(Error::Training(format!(
            "{k}-fold cross-validation needs k >= 2 and at least k samples per class, got {counts:?}"
        )));
    }
    if c_grid.is_empty() || gamma_factors.is_empty() {
        return Err(Error::Config("empty hyperparameter grid".into()));
    }
    let folds = stratified_folds(labels, k, seed);
    let mapped: Vec<(Vec<usize>, Vec<usize>, Vec<Vec<f64>>, Vec<Vec<f64>>)> = (0..k)
        .into_par_iter()
        .map(|f| {
            let (train, test): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| folds[i] != f);
            let raw: Vec<Vec<f64>> = train.iter().map(|&i| features[i].clone()).collect();
            let map = fit_map(&raw)?;
            let xtr = raw.iter().map(|v| map(v)).collect::<Result<Vec<_>>>()?;
            let xte = test.iter().map(|&i| map(&features[i])).collect::<Result<Vec<_>>>()?;
            Ok((train, test, xtr, xte))
        })
        .collect::<Result<_>>()?;

    let grid: Vec<(f64, f64)> = c_grid
        .iter()
        .flat_map(|&c| gamma_factors.iter().map(move |&g| (c, g)))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|g| (0..k).map(move |f| (g, f))).collect();
    let fold_scores: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(g, f)| {
            let (train, _, xtr, xte) = &mapped[f];
            let y: Vec<Label> = train.iter().map(|&i| labels[i]).collect();
            let dim = xtr.first().map_or(1, |v| v.len());
            let gr = GridResult {
                c: grid[g].0,
                gamma_factor: grid[g].1,
                cv_accuracy: 0.0,
                threshold: 0.0,
            };
            let model = svm_train(xtr, &y, gr.params(dim))?;
            xte.iter().map(|v| svm_score(&model, v)).collect()
        })
        .collect::<Result<_>>()?;

    let mut best: Option<(usize, f64, Vec<f64>)> = None;
    for g in 0..grid.len() {
        let mut scores = vec![0.0; labels.len()];
        for f in 0..k {
            for (&i, &s) in mapped[f].1.iter().zip(&fold_scores[g * k + f]) {
                scores[i] = s;
            }
        }
        let correct = scores
            .iter()
            .zip(labels)
            .filter(|(s, l)| Label::from_score(**s) == **l)
            .count();
        let acc = correct as f64 / labels.len() as f64;
        if best.as_ref().is_none_or(|b| acc > b.1) {
            best = Some((g, acc, scores));
        }
    }
    let (g, cv_accuracy, scores) = best.expect("non-empty grid");
    let samples: Vec<ScoredSample> = scores
        .iter()
        .zip(labels)
        .map(|(&score, &label)| ScoredSample::new(score, label))
        .collect();
    Ok(GridResult {
        c: grid[g].0,
        gamma_factor: grid[g].1,
        cv_accuracy,
        threshold: eer_threshold(&samples)?,
    })
}

/// Grid search, then a final fit on all data with the chosen threshold folded
/// into the bias so that the sign of the decision value is the decision.
pub fn train_tuned(features: &[Vec<f64>], labels: &[Label], seed: u64) -> Result<(SvmModel, GridResult)> {
    let grid = grid_search(features, labels, &GRID_C, &GRID_GAMMA_FACTORS, DEFAULT_FOLDS, seed)?;
    let dim = features.first().map_or(1, |v| v.len());
    let mut model = svm_train(features, labels, grid.params(dim))?;
    model.shift_bias(grid.threshold);
    Ok((model, grid))
}

pub fn logistic(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `a σ(s1) + b σ(s2)`; fused values at or above 0.5 are genuine.
pub fn fuse_scores(s_spmt: f64, s_tfbd: f64, ratio: (f64, f64)) -> Result<f64> {
    check_ratio(ratio)?;
    if !s_spmt.is_finite() || !s_tfbd.is_finite() {
        return Err(Error::Precondition("fusion inputs must be finite".into()));
    }
    Ok(ratio.0 * logistic(s_spmt) + ratio.1 * logistic(s_tfbd))
}

pub fn check_ratio((a, b): (f64, f64)) -> Result<()> {
    if !(a >= 0.0 && b >= 0.0) || a + b <= 0.0 {
        return Err(Error::Config(format!("fusion ratio ({a}, {b}) must be nonnegative and nonzero")));
    }
    if (a + b - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("fusion ratio ({a}, {b}) must sum to 1")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub score: f64,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack_type: Option<String>,
}

impl ScoredSample {
    pub fn new(score: f64, label: Label) -> Self {
        Self {
            score,
            label,
            attack_type: None,
        }
    }

    pub fn with_type(mut self, attack_type: impl Into<String>) -> Self {
        self.attack_type = Some(attack_type.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Threshold {
    Fixed(f64),
    /// The sweep point minimizing |FAR - FRR| on the evaluated samples.
    Eer,
    /// The same criterion on a separate development set.
    DevSet(Vec<ScoredSample>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_genuine: usize,
    pub n_attack: usize,
    pub threshold: f64,
    pub accuracy: f64,
    pub far: f64,
    pub frr: f64,
    pub hter: f64,
    pub apcer: f64,
    pub bpcer: f64,
    pub eer: f64,
    pub auc: f64,
    pub far_level: f64,
    pub tpr_at_far: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub apcer_per_type: BTreeMap<String, f64>,
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "samples    {} genuine / {} attack", self.n_genuine, self.n_attack)?;
        writeln!(f, "threshold  {:.6}", self.threshold)?;
        writeln!(f, "accuracy   {:.4}", self.accuracy)?;
        writeln!(f, "APCER      {:.4}", self.apcer)?;
        writeln!(f, "BPCER      {:.4}", self.bpcer)?;
        writeln!(f, "HTER       {:.4}", self.hter)?;
        writeln!(f, "EER        {:.4}", self.eer)?;
        writeln!(f, "AUC        {:.4}", self.auc)?;
        write!(f, "TPR@FAR={}  {:.4}", self.far_level, self.tpr_at_far)?;
        for (t, v) in &self.apcer_per_type {
            write!(f, "\nAPCER[{t}]  {v:.4}")?;
        }
        Ok(())
    }
}

/// `(FAR, FRR)` with genuine accepted when `score >= threshold`.
pub fn rates_at(samples: &[ScoredSample], threshold: f64) -> (f64, f64) {
    let (mut fa, mut na, mut fr, mut ng) = (0usize, 0usize, 0usize, 0usize);
    for s in samples {
        if s.label.is_genuine() {
            ng += 1;
            fr += usize::from(s.score < threshold);
        } else {
            na += 1;
            fa += usize::from(s.score >= threshold);
        }
    }
    (fa as f64 / na.max(1) as f64, fr as f64 / ng.max(1) as f64)
}

struct Sweep {
    thresholds: Vec<f64>,
    far: Vec<f64>,
    frr: Vec<f64>,
}

fn check_samples(samples: &[ScoredSample]) -> Result<(usize, usize)> {
    if samples.iter().any(|s| !s.score.is_finite()) {
        return Err(Error::Metrics("non-finite score".into()));
    }
    let ng = samples.iter().filter(|s| s.label.is_genuine()).count();
    let na = samples.len() - ng;
    if ng == 0 || na == 0 {
        return Err(Error::Metrics(format!(
            "both classes required, got {ng} genuine and {na} attack"
        )));
    }
    Ok((ng, na))
}

/// Ascending thresholds: below the minimum, midpoints between distinct
/// scores, above the maximum.
fn sweep(samples: &[ScoredSample]) -> Sweep {
    let (ng, na) = (
        samples.iter().filter(|s| s.label.is_genuine()).count() as f64,
        samples.iter().filter(|s| !s.label.is_genuine()).count() as f64,
    );
    let mut sorted: Vec<&ScoredSample> = samples.iter().collect();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));
    let lo = sorted[0].score;
    let hi = sorted[sorted.len() - 1].score;
    let mut thresholds = vec![lo - 1.0];
    let mut far = vec![1.0];
    let mut frr = vec![0.0];
    // counts of samples strictly below the current threshold
    let (mut g_below, mut a_below) = (0.0, 0.0);
    let mut k = 0;
    while k < sorted.len() {
        let v = sorted[k].score;
        while k < sorted.len() && sorted[k].score == v {
            if sorted[k].label.is_genuine() {
                g_below += 1.0;
            } else {
                a_below += 1.0;
            }
            k += 1;
        }
        thresholds.push(if k < sorted.len() {
            0.5 * (v + sorted[k].score)
        } else {
            hi + 1.0
        });
        far.push((na - a_below) / na);
        frr.push(g_below / ng);
    }
    Sweep { thresholds, far, frr }
}

fn operating_index(sw: &Sweep) -> usize {
    (0..sw.thresholds.len())
        .min_by(|&a, &b| {
            (sw.far[a] - sw.frr[a])
                .abs()
                .total_cmp(&(sw.far[b] - sw.frr[b]).abs())
                .then(a.cmp(&b))
        })
        .expect("sweep has end points")
}

/// Threshold minimizing |FAR - FRR| over the sweep.
pub fn eer_threshold(samples: &[ScoredSample]) -> Result<f64> {
    check_samples(samples)?;
    let sw = sweep(samples);
    Ok(sw.thresholds[operating_index(&sw)])
}

fn eer_of(sw: &Sweep) -> f64 {
    let d: Vec<f64> = sw.far.iter().zip(&sw.frr).map(|(a, r)| a - r).collect();
    for k in 0..d.len() - 1 {
        if d[k] >= 0.0 && d[k + 1] <= 0.0 {
            if d[k] == d[k + 1] {
                return sw.far[k];
            }
            let t = d[k] / (d[k] - d[k + 1]);
            return sw.far[k] + t * (sw.far[k + 1] - sw.far[k]);
        }
    }
    unreachable!("FAR - FRR goes from 1 to -1 along the sweep")
}

fn auc_of(sw: &Sweep, ng: usize, na: usize) -> f64 {
    // Thresholds ascend, so FAR and TPR descend. Summing integer counts keeps
    // the area exact up to one final division.
    let fa = |k: usize| (sw.far[k] * na as f64).round() as u64;
    let tp = |k: usize| ng as u64 - (sw.frr[k] * ng as f64).round() as u64;
    let twice: u64 = (0..sw.thresholds.len() - 1)
        .map(|k| (fa(k) - fa(k + 1)) * (tp(k) + tp(k + 1)))
        .sum();
    twice as f64 / (2 * ng * na) as f64
}

pub fn compute_metrics(samples: &[ScoredSample], threshold: &Threshold, far_level: f64) -> Result<MetricsReport> {
    let (ng, na) = check_samples(samples)?;
    if !(0.0..=1.0).contains(&far_level) {
        return Err(Error::Config(format!("FAR level {far_level} outside [0, 1]")));
    }
    let sw = sweep(samples);
    let thr = match threshold {
        Threshold::Fixed(t) => {
            if !t.is_finite() {
                return Err(Error::Config("threshold must be finite".into()));
            }
            *t
        }
        Threshold::Eer => sw.thresholds[operating_index(&sw)],
        Threshold::DevSet(dev) => eer_threshold(dev)?,
    };
    let (far, frr) = rates_at(samples, thr);
    let correct = samples
        .iter()
        .filter(|s| (s.score >= thr) == s.label.is_genuine())
        .count();
    let tpr_at_far = (0..sw.thresholds.len())
        .find(|&k| sw.far[k] <= far_level)
        .map(|k| 1.0 - sw.frr[k])
        .expect("the top sweep point has FAR 0");

    let mut per_type: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for s in samples.iter().filter(|s| !s.label.is_genuine()) {
        if let Some(t) = &s.attack_type {
            let e = per_type.entry(t.clone()).or_default();
            e.0 += usize::from(s.score >= thr);
            e.1 += 1;
        }
    }
    Ok(MetricsReport {
        n_genuine: ng,
        n_attack: na,
        threshold: thr,
        accuracy: correct as f64 / samples.len() as f64,
        far,
        frr,
        hter: (far + frr) / 2.0,
        apcer: far,
        bpcer: frr,
        eer: eer_of(&sw),
        auc: auc_of(&sw, ng, na),
        far_level,
        tpr_at_far,
        apcer_per_type: per_type
            .into_iter()
            .map(|(t, (a, n))| (t, a as f64 / n as f64))
            .collect(),
    })
}

/// One line of a scores file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub score: f64,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack_type: Option<String>,
}

impl ScoreRecord {
    pub fn sample(&self) -> ScoredSample {
        ScoredSample {
            score: self.score,
            label: self.label,
            attack_type: self.attack_type.clone(),
        }
    }
}

pub fn scores_to_jsonl(records: &[ScoreRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("score record serializes") + "\n")
        .collect()
}

pub fn write_scores(path: impl AsRef<Path>, records: &[ScoreRecord]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, scores_to_jsonl(records)).map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::json(format!("{}:{}", path.display(), i + 1), e)))
        .collect()
}
