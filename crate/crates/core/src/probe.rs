//! Gender probe: a nu-SVC with an RBF kernel, trained by pairwise working-set
//! ascent on the dual.
//!
//! The dual solved here is
//!
//! ```text
//! min  1/2 a'Qa      Q_ij = y_i y_j K(x_i, x_j)
//! s.t. 0 <= a_i <= 1/l,  sum_{y_i=+1} a_i = sum_{y_i=-1} a_i = nu/2
//! ```
//!
//! Internally multipliers are kept as `l * a_i` (box `[0, 1]`), which is the
//! scale the KKT residual is measured in. Labels are `+1` (male) and `-1`
//! (female).

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding_store::{EmbeddingStore, StoreError};
use crate::lexicon::Gender;
use crate::{par, round1};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const TAU: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum ProbeError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no training rows")]
    Empty,
    #[error("training data must contain both classes")]
    SingleClass,
    #[error("row {row}: label {value} is not +1 or -1")]
    BadLabel { row: usize, value: i8 },
    #[error("row {0} contains NaN or infinite values")]
    NonFinite(usize),
    #[error("{what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("nu = {nu} is infeasible; this class balance allows at most {max}")]
    Infeasible { nu: f64, max: f64 },
    #[error("no convergence after {passes} passes (best KKT residual {residual:e})")]
    NoConvergence { passes: usize, residual: f64 },
    #[error("empty nu grid")]
    EmptyGrid,
    #[error("every grid point failed: {0:?}")]
    AllGridPointsFailed(Vec<String>),
    #[error("bad model file: {0}")]
    Model(String),
    #[error("dataset line {line}: {message}")]
    Dataset { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub nu: f64,
    /// RBF width. `None` picks `1 / (d * mean coordinate variance)`.
    pub gamma: Option<f64>,
    pub kkt_tolerance: f64,
    /// One pass is `l` pair updates.
    pub max_passes: usize,
    pub seed: u64,
    /// Standardize each coordinate with training mean and deviation.
    pub standardize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            nu: 0.5,
            gamma: None,
            kkt_tolerance: 1e-3,
            max_passes: 10_000,
            seed: 0,
            standardize: false,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<(), ProbeError> {
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return Err(ProbeError::InvalidConfig(format!("nu = {} outside (0, 1]", self.nu)));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(ProbeError::InvalidConfig(format!("gamma = {g} must be positive")));
            }
        }
        if self.kkt_tolerance.is_nan() || self.kkt_tolerance <= 0.0 {
            return Err(ProbeError::InvalidConfig("kkt_tolerance must be positive".into()));
        }
        if self.max_passes == 0 {
            return Err(ProbeError::InvalidConfig("max_passes must be positive".into()));
        }
        Ok(())
    }
}

/// Default `gamma`: `1 / (d * mean per-coordinate population variance)`, or
/// `1.0` when the features have no variance.
pub fn default_gamma(features: ArrayView2<'_, f64>) -> f64 {
    let (n, d) = features.dim();
    if n == 0 || d == 0 {
        return 1.0;
    }
    let var = features.var_axis(Axis(0), 0.0).mean().unwrap_or(0.0);
    if var > 0.0 && var.is_finite() {
        1.0 / (d as f64 * var)
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    fn fit(x: ArrayView2<'_, f64>) -> Standardization {
        let mean = x.mean_axis(Axis(0)).expect("non-empty").to_vec();
        let scale = x
            .std_axis(Axis(0), 0.0)
            .iter()
            .map(|s| if *s > 0.0 { *s } else { 1.0 })
            .collect();
        Standardization { mean, scale }
    }

    fn apply_row(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        Array1::from_iter(
            x.iter()
                .zip(self.mean.iter().zip(&self.scale))
                .map(|(v, (m, s))| (v - m) / s),
        )
    }

    fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            let t = self.apply_row(row.view());
            row.assign(&t);
        }
        out
    }
}

/// A trained probe. Holds only the support vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    pub support_vectors: Array2<f64>,
    /// Dual multipliers `a_i` in `(0, 1/l]`.
    pub alpha: Vec<f64>,
    pub labels: Vec<i8>,
    pub b: f64,
    pub rho: f64,
    pub gamma: f64,
    pub gamma_from_heuristic: bool,
    pub nu: f64,
    pub n_train: usize,
    pub kkt_residual: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    pub seed: u64,
    pub standardization: Option<Standardization>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: i8,
    pub margin: f64,
}

fn rbf(gamma: f64, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let d2: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

/// `K(x_i, x_j)` for all rows, computed row-parallel.
pub fn gram_matrix(x: ArrayView2<'_, f64>, gamma: f64, threads: usize) -> Array2<f64> {
    let n = x.nrows();
    let rows = par::map_range(n, threads, |i| {
        (0..n).map(|j| rbf(gamma, x.row(i), x.row(j))).collect::<Vec<f64>>()
    });
    Array2::from_shape_vec((n, n), rows.into_iter().flatten().collect()).expect("n x n")
}

fn check_inputs(features: ArrayView2<'_, f64>, labels: &[i8]) -> Result<(usize, usize), ProbeError> {
    if features.nrows() != labels.len() {
        return Err(ProbeError::LengthMismatch {
            what: "labels",
            expected: features.nrows(),
            got: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(ProbeError::Empty);
    }
    for (row, &y) in labels.iter().enumerate() {
        if y != 1 && y != -1 {
            return Err(ProbeError::BadLabel { row, value: y });
        }
    }
    if let Some(row) = features
        .rows()
        .into_iter()
        .position(|r| r.iter().any(|v| !v.is_finite()))
    {
        return Err(ProbeError::NonFinite(row));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(ProbeError::SingleClass);
    }
    Ok((pos, neg))
}

/// Row order the solver works in: by label, then lexicographically by
/// features. Makes training independent of input row order.
fn canonical_order(x: ArrayView2<'_, f64>, labels: &[i8]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..labels.len()).collect();
    idx.sort_by(|&a, &b| {
        labels[b].cmp(&labels[a]).then_with(|| {
            for (u, v) in x.row(a).iter().zip(x.row(b).iter()) {
                match u.total_cmp(v) {
                    Ordering::Equal => continue,
                    other => return other,
                }
            }
            Ordering::Equal
        })
    });
    idx
}

struct Solution {
    beta: Vec<f64>,
    grad: Vec<f64>,
    residual: f64,
    iterations: usize,
    converged: bool,
}

struct WorkingSet {
    residual: f64,
    pair: Option<(usize, usize)>,
}

fn select_working_set(beta: &[f64], grad: &[f64], y: &[f64], q: &Array2<f64>) -> WorkingSet {
    let n = beta.len();
    let at_upper = |t: usize| beta[t] >= 1.0;
    let at_lower = |t: usize| beta[t] <= 0.0;

    let (mut gmaxp, mut gmaxn) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let (mut ip, mut in_) = (None, None);
    for t in 0..n {
        if y[t] > 0.0 {
            if !at_upper(t) && -grad[t] > gmaxp {
                gmaxp = -grad[t];
                ip = Some(t);
            }
        } else if !at_lower(t) && grad[t] > gmaxn {
            gmaxn = grad[t];
            in_ = Some(t);
        }
    }

    let (mut gmaxp2, mut gmaxn2) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut best: Option<usize> = None;
    let mut best_obj = f64::INFINITY;
    for j in 0..n {
        if y[j] > 0.0 {
            if at_lower(j) {
                continue;
            }
            gmaxp2 = gmaxp2.max(grad[j]);
            let Some(i) = ip else { continue };
            let diff = gmaxp + grad[j];
            if diff > 0.0 {
                let mut quad = q[[i, i]] + q[[j, j]] - 2.0 * q[[i, j]];
                if quad <= 0.0 {
                    quad = TAU;
                }
                let obj = -(diff * diff) / quad;
                if obj < best_obj {
                    best_obj = obj;
                    best = Some(j);
                }
            }
        } else {
            if at_upper(j) {
                continue;
            }
            gmaxn2 = gmaxn2.max(-grad[j]);
            let Some(i) = in_ else { continue };
            let diff = gmaxn - grad[j];
            if diff > 0.0 {
                let mut quad = q[[i, i]] + q[[j, j]] - 2.0 * q[[i, j]];
                if quad <= 0.0 {
                    quad = TAU;
                }
                let obj = -(diff * diff) / quad;
                if obj < best_obj {
                    best_obj = obj;
                    best = Some(j);
                }
            }
        }
    }
    let residual = (gmaxp + gmaxp2).max(gmaxn + gmaxn2).max(0.0);
    let pair = best.map(|j| (if y[j] > 0.0 { ip.unwrap() } else { in_.unwrap() }, j));
    WorkingSet { residual, pair }
}

fn solve(q: &Array2<f64>, y: &[f64], nu: f64, tol: f64, max_iter: usize) -> Solution {
    let n = y.len();
    let mut beta = vec![0.0; n];
    // Fill each class greedily up to nu * l / 2.
    for class in [1.0, -1.0] {
        let mut left = nu * n as f64 / 2.0;
        for t in 0..n {
            if y[t] == class && left > 0.0 {
                beta[t] = left.min(1.0);
                left -= beta[t];
            }
        }
    }
    let mut grad = vec![0.0; n];
    for (t, &bt) in beta.iter().enumerate() {
        if bt != 0.0 {
            for (g, qv) in grad.iter_mut().zip(q.row(t)) {
                *g += qv * bt;
            }
        }
    }

    let mut iterations = 0;
    loop {
        let ws = select_working_set(&beta, &grad, y, q);
        let Some((i, j)) = ws.pair.filter(|_| ws.residual >= tol) else {
            return Solution {
                beta,
                grad,
                residual: ws.residual,
                iterations,
                converged: true,
            };
        };
        if iterations >= max_iter {
            return Solution {
                beta,
                grad,
                residual: ws.residual,
                iterations,
                converged: false,
            };
        }
        iterations += 1;

        let (old_i, old_j) = (beta[i], beta[j]);
        let mut quad = q[[i, i]] + q[[j, j]] - 2.0 * q[[i, j]];
        if quad <= 0.0 {
            quad = TAU;
        }
        let delta = (grad[i] - grad[j]) / quad;
        let sum = beta[i] + beta[j];
        beta[i] -= delta;
        beta[j] += delta;
        if sum > 1.0 {
            if beta[i] > 1.0 {
                beta[i] = 1.0;
                beta[j] = sum - 1.0;
            }
            if beta[j] > 1.0 {
                beta[j] = 1.0;
                beta[i] = sum - 1.0;
            }
        } else {
            if beta[j] < 0.0 {
                beta[j] = 0.0;
                beta[i] = sum;
            }
            if beta[i] < 0.0 {
                beta[i] = 0.0;
                beta[j] = sum;
            }
        }
        let (di, dj) = (beta[i] - old_i, beta[j] - old_j);
        let (qi, qj) = (q.row(i), q.row(j));
        for t in 0..n {
            grad[t] += qi[t] * di + qj[t] * dj;
        }
    }
}

/// `(r_+, r_-)`: per-class gradient level, from free multipliers when there
/// are any, else the midpoint of the feasible interval.
fn class_levels(beta: &[f64], grad: &[f64], y: &[f64]) -> (f64, f64) {
    let level = |class: f64| {
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut sum, mut free) = (0.0, 0usize);
        for t in 0..beta.len() {
            if y[t] != class {
                continue;
            }
            if beta[t] >= 1.0 {
                lb = lb.max(grad[t]);
            } else if beta[t] <= 0.0 {
                ub = ub.min(grad[t]);
            } else {
                free += 1;
                sum += grad[t];
            }
        }
        if free > 0 {
            sum / free as f64
        } else if ub.is_finite() && lb.is_finite() {
            (ub + lb) / 2.0
        } else if ub.is_finite() {
            ub
        } else {
            lb
        }
    };
    (level(1.0), level(-1.0))
}

pub fn train(features: ArrayView2<'_, f64>, labels: &[i8], config: &ProbeConfig) -> Result<ProbeModel, ProbeError> {
    train_threaded(features, labels, config, 1)
}

/// As [`train`], computing Gram rows on `threads` workers. The ascent itself
/// is sequential, so the result does not depend on `threads`.
pub fn train_threaded(
    features: ArrayView2<'_, f64>,
    labels: &[i8],
    config: &ProbeConfig,
    threads: usize,
) -> Result<ProbeModel, ProbeError> {
    config.validate()?;
    let (pos, neg) = check_inputs(features, labels)?;
    let l = labels.len();
    let max_nu = 2.0 * pos.min(neg) as f64 / l as f64;
    if config.nu > max_nu + 1e-12 {
        return Err(ProbeError::Infeasible {
            nu: config.nu,
            max: max_nu,
        });
    }

    let standardization = config.standardize.then(|| Standardization::fit(features));
    let x = match &standardization {
        Some(s) => s.apply(features),
        None => features.to_owned(),
    };
    let order = canonical_order(x.view(), labels);
    let x = x.select(Axis(0), &order);
    let y: Vec<f64> = order.iter().map(|&i| labels[i] as f64).collect();
    let (gamma, gamma_from_heuristic) = match config.gamma {
        Some(g) => (g, false),
        None => (default_gamma(x.view()), true),
    };

    let mut q = gram_matrix(x.view(), gamma, threads);
    for ((i, j), v) in q.indexed_iter_mut() {
        *v *= y[i] * y[j];
    }
    let max_iter = config.max_passes.saturating_mul(l);
    let sol = solve(&q, &y, config.nu, config.kkt_tolerance, max_iter);
    if !sol.converged {
        return Err(ProbeError::NoConvergence {
            passes: config.max_passes,
            residual: sol.residual,
        });
    }

    let (r_pos, r_neg) = class_levels(&sol.beta, &sol.grad, &y);
    let scale = 1.0 / l as f64;
    let objective: f64 = 0.5 * sol.beta.iter().zip(&sol.grad).map(|(b, g)| b * g).sum::<f64>() * scale * scale;
    let sv: Vec<usize> = (0..l).filter(|&t| sol.beta[t] > 0.0).collect();
    Ok(ProbeModel {
        support_vectors: x.select(Axis(0), &sv),
        alpha: sv.iter().map(|&t| sol.beta[t] * scale).collect(),
        labels: sv.iter().map(|&t| y[t] as i8).collect(),
        b: (r_neg - r_pos) / 2.0 * scale,
        rho: (r_pos + r_neg) / 2.0 * scale,
        gamma,
        gamma_from_heuristic,
        nu: config.nu,
        n_train: l,
        kkt_residual: sol.residual,
        dual_objective: objective,
        iterations: sol.iterations,
        seed: config.seed,
        standardization,
    })
}

impl ProbeModel {
    pub fn dim(&self) -> usize {
        self.support_vectors.ncols()
    }

    pub fn n_support(&self) -> usize {
        self.alpha.len()
    }

    /// `sum a_i y_i K(x_i, x) + b` for an already-standardized `x`.
    fn raw_decision(&self, x: ArrayView1<'_, f64>) -> f64 {
        let mut acc = 0.0;
        for ((sv, a), y) in self
            .support_vectors
            .rows()
            .into_iter()
            .zip(&self.alpha)
            .zip(&self.labels)
        {
            acc += a * *y as f64 * rbf(self.gamma, sv, x);
        }
        acc + self.b
    }

    pub fn decision(&self, x: ArrayView1<'_, f64>) -> Result<f64, ProbeError> {
        if x.len() != self.dim() {
            return Err(ProbeError::LengthMismatch {
                what: "feature dimension",
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(match &self.standardization {
            Some(s) => self.raw_decision(s.apply_row(x).view()),
            None => self.raw_decision(x),
        })
    }

    /// Label is `+1` when the decision value is `>= 0`.
    pub fn predict(&self, x: ArrayView1<'_, f64>) -> Result<Prediction, ProbeError> {
        let margin = self.decision(x)?;
        Ok(Prediction {
            label: if margin >= 0.0 { 1 } else { -1 },
            margin,
        })
    }

    pub fn predict_all(&self, x: ArrayView2<'_, f64>, threads: usize) -> Result<Vec<Prediction>, ProbeError> {
        if x.ncols() != self.dim() {
            return Err(ProbeError::LengthMismatch {
                what: "feature dimension",
                expected: self.dim(),
                got: x.ncols(),
            });
        }
        let rows: Vec<ArrayView1<'_, f64>> = x.rows().into_iter().collect();
        par::map(&rows, threads, |r| self.predict(*r)).into_iter().collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelFile::from_model(self)).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<ProbeModel, ProbeError> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| ProbeError::Model(e.to_string()))?;
        file.into_model()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ProbeError> {
        let path = path.as_ref();
        crate::io::atomic_write(path, self.to_json().as_bytes()).map_err(|source| ProbeError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ProbeModel, ProbeError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ProbeError::Io {
            path: path.display().to_string(),
            source,
        })?;
        ProbeModel::from_json(&text)
    }
}

fn encode_f64(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    B64.encode(bytes)
}

fn decode_f64(text: &str, expected: usize, what: &str) -> Result<Vec<f64>, ProbeError> {
    let bytes = B64
        .decode(text)
        .map_err(|e| ProbeError::Model(format!("{what}: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(ProbeError::Model(format!(
            "{what}: {} bytes, expected {}",
            bytes.len(),
            expected * 8
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct StandardizationFile {
    mean: String,
    scale: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    kernel: String,
    gamma: f64,
    gamma_from_heuristic: bool,
    nu: f64,
    b: f64,
    rho: f64,
    n_train: usize,
    dim: usize,
    n_support: usize,
    kkt_residual: f64,
    dual_objective: f64,
    iterations: usize,
    seed: u64,
    labels: Vec<i8>,
    alpha: String,
    support_vectors: String,
    standardization: Option<StandardizationFile>,
}

impl ModelFile {
    fn from_model(m: &ProbeModel) -> ModelFile {
        ModelFile {
            version: MODEL_FORMAT_VERSION,
            kernel: "rbf".into(),
            gamma: m.gamma,
            gamma_from_heuristic: m.gamma_from_heuristic,
            nu: m.nu,
            b: m.b,
            rho: m.rho,
            n_train: m.n_train,
            dim: m.dim(),
            n_support: m.n_support(),
            kkt_residual: m.kkt_residual,
            dual_objective: m.dual_objective,
            iterations: m.iterations,
            seed: m.seed,
            labels: m.labels.clone(),
            alpha: encode_f64(&m.alpha),
            support_vectors: encode_f64(m.support_vectors.as_standard_layout().as_slice().unwrap()),
            standardization: m.standardization.as_ref().map(|s| StandardizationFile {
                mean: encode_f64(&s.mean),
                scale: encode_f64(&s.scale),
            }),
        }
    }

    fn into_model(self) -> Result<ProbeModel, ProbeError> {
        if self.version != MODEL_FORMAT_VERSION {
            return Err(ProbeError::Model(format!("unsupported version {}", self.version)));
        }
        if self.kernel != "rbf" {
            return Err(ProbeError::Model(format!("unsupported kernel `{}`", self.kernel)));
        }
        if self.labels.len() != self.n_support {
            return Err(ProbeError::Model("label count differs from n_support".into()));
        }
        let alpha = decode_f64(&self.alpha, self.n_support, "alpha")?;
        let sv = decode_f64(&self.support_vectors, self.n_support * self.dim, "support_vectors")?;
        let standardization = match self.standardization {
            Some(s) => Some(Standardization {
                mean: decode_f64(&s.mean, self.dim, "standardization.mean")?,
                scale: decode_f64(&s.scale, self.dim, "standardization.scale")?,
            }),
            None => None,
        };
        Ok(ProbeModel {
            support_vectors: Array2::from_shape_vec((self.n_support, self.dim), sv).expect("length checked"),
            alpha,
            labels: self.labels,
            b: self.b,
            rho: self.rho,
            gamma: self.gamma,
            gamma_from_heuristic: self.gamma_from_heuristic,
            nu: self.nu,
            n_train: self.n_train,
            kkt_residual: self.kkt_residual,
            dual_objective: self.dual_objective,
            iterations: self.iterations,
            seed: self.seed,
            standardization,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub correct: usize,
    pub total: usize,
    /// Percentage rounded to one decimal.
    pub accuracy: f64,
}

impl GroupStat {
    fn new(correct: usize, total: usize) -> Option<GroupStat> {
        (total > 0).then(|| GroupStat {
            correct,
            total,
            accuracy: round1(100.0 * correct as f64 / total as f64),
        })
    }
}

/// Accuracy per gender group; a group with no rows is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub overall: Option<GroupStat>,
    #[serde(rename = "M")]
    pub male: Option<GroupStat>,
    #[serde(rename = "F")]
    pub female: Option<GroupStat>,
}

/// Scores already-made predictions against labels, split by group.
pub fn accuracy_by_group(predicted: &[i8], labels: &[i8], groups: &[Gender]) -> Result<GroupAccuracy, ProbeError> {
    for (what, len) in [("labels", labels.len()), ("groups", groups.len())] {
        if len != predicted.len() {
            return Err(ProbeError::LengthMismatch {
                what,
                expected: predicted.len(),
                got: len,
            });
        }
    }
    let mut counts: HashMap<Gender, (usize, usize)> = HashMap::new();
    for ((p, y), g) in predicted.iter().zip(labels).zip(groups) {
        let e = counts.entry(*g).or_default();
        e.1 += 1;
        if p == y {
            e.0 += 1;
        }
    }
    let get = |g| counts.get(&g).copied().unwrap_or((0, 0));
    let (mc, mt) = get(Gender::Male);
    let (fc, ft) = get(Gender::Female);
    Ok(GroupAccuracy {
        overall: GroupStat::new(mc + fc, mt + ft),
        male: GroupStat::new(mc, mt),
        female: GroupStat::new(fc, ft),
    })
}

pub fn evaluate_by_group(
    model: &ProbeModel,
    features: ArrayView2<'_, f64>,
    labels: &[i8],
    groups: &[Gender],
) -> Result<GroupAccuracy, ProbeError> {
    let predicted: Vec<i8> = model.predict_all(features, 1)?.iter().map(|p| p.label).collect();
    accuracy_by_group(&predicted, labels, groups)
}

/// Seeded uniform split into `(train, heldout)` row indices, each sorted.
/// The held-out side gets `round(n * heldout_fraction)` rows, at least one
/// and leaving at least one for training.
pub fn split_indices(n: usize, heldout_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = ((n as f64 * heldout_fraction).round() as usize).clamp(1.min(n), n.saturating_sub(1));
    let mut heldout = idx[..k].to_vec();
    let mut train = idx[k..].to_vec();
    heldout.sort_unstable();
    train.sort_unstable();
    (train, heldout)
}

pub fn default_nu_grid() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunePoint {
    pub nu: f64,
    /// Held-out accuracy as a fraction, when training succeeded.
    pub accuracy: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: ProbeConfig,
    pub best_accuracy: f64,
    pub points: Vec<TunePoint>,
    pub train_rows: Vec<usize>,
    pub heldout_rows: Vec<usize>,
}

/// Grid search over `nu` on a seeded split. Ties go to the smaller `nu`.
pub fn tune_nu(
    features: ArrayView2<'_, f64>,
    labels: &[i8],
    grid: &[f64],
    heldout_fraction: f64,
    base: &ProbeConfig,
    threads: usize,
) -> Result<TuneResult, ProbeError> {
    if grid.is_empty() {
        return Err(ProbeError::EmptyGrid);
    }
    if let Some(nu) = grid.iter().find(|nu| !(**nu > 0.0 && **nu <= 1.0)) {
        return Err(ProbeError::InvalidConfig(format!("grid value {nu} outside (0, 1]")));
    }
    if !(heldout_fraction > 0.0 && heldout_fraction < 1.0) {
        return Err(ProbeError::InvalidConfig(format!(
            "heldout fraction {heldout_fraction} outside (0, 1)"
        )));
    }
    check_inputs(features, labels)?;
    let (train_rows, heldout_rows) = split_indices(labels.len(), heldout_fraction, base.seed);
    let xt = features.select(Axis(0), &train_rows);
    let yt: Vec<i8> = train_rows.iter().map(|&i| labels[i]).collect();
    let xh = features.select(Axis(0), &heldout_rows);
    let yh: Vec<i8> = heldout_rows.iter().map(|&i| labels[i]).collect();

    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut points = Vec::with_capacity(sorted.len());
    let mut best: Option<(f64, f64)> = None;
    for nu in sorted {
        let config = ProbeConfig { nu, ..base.clone() };
        let outcome = train_threaded(xt.view(), &yt, &config, threads)
            .and_then(|m| m.predict_all(xh.view(), threads))
            .map(|preds| preds.iter().zip(&yh).filter(|(p, y)| p.label == **y).count() as f64 / yh.len() as f64);
        match outcome {
            Ok(acc) => {
                if best.is_none_or(|(_, b)| acc > b) {
                    best = Some((nu, acc));
                }
                points.push(TunePoint {
                    nu,
                    accuracy: Some(acc),
                    error: None,
                });
            }
            Err(e) => points.push(TunePoint {
                nu,
                accuracy: None,
                error: Some(e.to_string()),
            }),
        }
    }
    let Some((nu, best_accuracy)) = best else {
        return Err(ProbeError::AllGridPointsFailed(
            points.into_iter().filter_map(|p| p.error).collect(),
        ));
    };
    Ok(TuneResult {
        best: ProbeConfig { nu, ..base.clone() },
        best_accuracy,
        points,
        train_rows,
        heldout_rows,
    })
}

/// One line of a probe dataset manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub store: String,
    pub sentence_id: String,
    pub token_index: usize,
    pub gender: Gender,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeDataset {
    pub rows: Vec<ProbeRow>,
    pub features: Array2<f64>,
    pub labels: Vec<i8>,
    pub groups: Vec<Gender>,
}

pub fn gender_label(g: Gender) -> i8 {
    match g {
        Gender::Male => 1,
        Gender::Female => -1,
    }
}

impl ProbeDataset {
    /// Reads a JSONL manifest and pulls each referenced vector from its store.
    /// Relative store paths resolve against the manifest's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<ProbeDataset, ProbeError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ProbeError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: ProbeRow = serde_json::from_str(line).map_err(|e| ProbeError::Dataset {
                line: i + 1,
                message: e.to_string(),
            })?;
            rows.push(row);
        }
        ProbeDataset::from_rows(rows, &base)
    }

    pub fn from_rows(rows: Vec<ProbeRow>, base: &Path) -> Result<ProbeDataset, ProbeError> {
        let mut stores: HashMap<PathBuf, EmbeddingStore> = HashMap::new();
        let mut data = Vec::new();
        let mut dim = None;
        for (i, row) in rows.iter().enumerate() {
            let p = base.join(&row.store);
            if !stores.contains_key(&p) {
                stores.insert(p.clone(), EmbeddingStore::open(&p)?);
            }
            let store = &stores[&p];
            let d = *dim.get_or_insert(store.dim());
            if store.dim() != d {
                return Err(ProbeError::Dataset {
                    line: i + 1,
                    message: format!("store dim {} differs from {d}", store.dim()),
                });
            }
            let v = store.read_vectors(&row.sentence_id, Some(row.token_index..row.token_index + 1))?;
            data.extend(v.iter().map(|&x| x as f64));
        }
        let n = rows.len();
        let labels = rows.iter().map(|r| gender_label(r.gender)).collect();
        let groups = rows.iter().map(|r| r.gender).collect();
        Ok(ProbeDataset {
            features: Array2::from_shape_vec((n, dim.unwrap_or(0)), data).expect("rows of equal dim"),
            rows,
            labels,
            groups,
        })
    }
}
