//! Gender subspace: differences of target-word vectors between original and
//! swapped sentences, PCA over those differences, projection and removal.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::Write as _;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::embedding_store::{AlignedPair, StoreError};
use crate::lexicon::{Gender, GenderLexicon};
use crate::par;

/// Total variance below this is treated as degenerate.
pub const DEGENERACY_THRESHOLD: f64 = 1e-12;
/// Above this dimension `Solver::Auto` switches to power iteration.
pub const JACOBI_MAX_DIM: usize = 256;

#[derive(Debug, thiserror::Error)]
pub enum SubspaceError {
    #[error("no target index for sentence `{0}`")]
    MissingTarget(String),
    #[error("target index {index} out of bounds for sentence `{id}` with {len} tokens")]
    TargetOutOfBounds { id: String, index: usize, len: usize },
    #[error("non-finite value in sentence `{0}`")]
    NonFinite(String),
    #[error("PCA needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("k = {k} outside 1..={d}")]
    InvalidK { k: usize, d: usize },
    #[error("j = {j} exceeds the {k} fitted components")]
    InvalidJ { j: usize, k: usize },
    #[error("total variance {0:e} is below the degeneracy threshold")]
    Degenerate(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowLabel {
    pub sentence_id: String,
    pub token_index: usize,
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceMatrix {
    pub rows: Array2<f64>,
    pub labels: Vec<RowLabel>,
}

impl DifferenceMatrix {
    /// Wraps an existing matrix, labelling rows by position.
    pub fn from_rows(rows: Array2<f64>) -> Result<DifferenceMatrix, SubspaceError> {
        if let Some(i) = rows.rows().into_iter().position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(SubspaceError::NonFinite(i.to_string()));
        }
        let labels = (0..rows.nrows())
            .map(|i| RowLabel {
                sentence_id: i.to_string(),
                token_index: 0,
                surface: String::new(),
            })
            .collect();
        Ok(DifferenceMatrix { rows, labels })
    }

    pub fn nrows(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }
}

/// Row `i` is `vectors_a[t] - vectors_b[t]` for pair `i`, computed in `f64`.
pub fn difference_matrix(
    pairs: &[AlignedPair],
    targets: &HashMap<String, usize>,
    threads: usize,
) -> Result<DifferenceMatrix, SubspaceError> {
    let dim = pairs.first().map_or(0, AlignedPair::dim);
    let rows = par::map(pairs, threads, |pair| -> Result<(Vec<f64>, RowLabel), SubspaceError> {
        let id = &pair.sentence_id;
        let t = *targets
            .get(id)
            .ok_or_else(|| SubspaceError::MissingTarget(id.clone()))?;
        if t >= pair.len() {
            return Err(SubspaceError::TargetOutOfBounds {
                id: id.clone(),
                index: t,
                len: pair.len(),
            });
        }
        if pair.dim() != dim {
            return Err(SubspaceError::DimMismatch {
                expected: dim,
                got: pair.dim(),
            });
        }
        let a = pair.vectors_a.row(t);
        let b = pair.vectors_b.row(t);
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(SubspaceError::NonFinite(id.clone()));
        }
        let row = a.iter().zip(b.iter()).map(|(&x, &y)| x as f64 - y as f64).collect();
        let label = RowLabel {
            sentence_id: id.clone(),
            token_index: t,
            surface: pair.tokens_a[t].clone(),
        };
        Ok((row, label))
    });
    let mut data = Vec::with_capacity(pairs.len() * dim);
    let mut labels = Vec::with_capacity(pairs.len());
    for r in rows {
        let (row, label) = r?;
        data.extend(row);
        labels.push(label);
    }
    Ok(DifferenceMatrix {
        rows: Array2::from_shape_vec((labels.len(), dim), data).expect("rows have equal length"),
        labels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// Jacobi up to `JACOBI_MAX_DIM`, power iteration above.
    #[default]
    Auto,
    Jacobi,
    PowerIteration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaResult {
    /// `k x d`, orthonormal rows.
    pub components: Array2<f64>,
    pub eigenvalues: Vec<f64>,
    pub explained_ratio: Vec<f64>,
    pub mean: Array1<f64>,
    pub total_variance: f64,
    pub centered: bool,
    pub n_samples: usize,
}

impl PcaResult {
    pub fn k(&self) -> usize {
        self.components.nrows()
    }

    pub fn dim(&self) -> usize {
        self.components.ncols()
    }

    /// Largest `|<c_i, c_j> - delta_ij|`.
    pub fn orthonormality_residual(&self) -> f64 {
        let g = self.components.dot(&self.components.t());
        let mut worst = 0.0f64;
        for ((i, j), v) in g.indexed_iter() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((v - target).abs());
        }
        worst
    }

    /// `component_index,explained_ratio`, one row per fitted component.
    pub fn scree_csv(&self) -> String {
        let mut out = String::from("component_index,explained_ratio\n");
        for (i, r) in self.explained_ratio.iter().enumerate() {
            writeln!(out, "{},{}", i + 1, r).unwrap();
        }
        out
    }
}

pub fn pca(m: &DifferenceMatrix, k: usize, center: bool) -> Result<PcaResult, SubspaceError> {
    pca_with(m, k, center, Solver::Auto)
}

pub fn pca_with(m: &DifferenceMatrix, k: usize, center: bool, solver: Solver) -> Result<PcaResult, SubspaceError> {
    let (n, d) = m.rows.dim();
    if n < 2 {
        return Err(SubspaceError::TooFewRows(n));
    }
    if k == 0 || k > d {
        return Err(SubspaceError::InvalidK { k, d });
    }
    let mean = if center {
        m.rows.mean_axis(Axis(0)).expect("n >= 2")
    } else {
        Array1::zeros(d)
    };
    let x = &m.rows - &mean;
    let divisor = if center { (n - 1) as f64 } else { n as f64 };
    let cov = x.t().dot(&x) / divisor;
    let trace = cov.diag().sum();
    if trace.is_nan() || trace < DEGENERACY_THRESHOLD {
        return Err(SubspaceError::Degenerate(trace));
    }
    let use_jacobi = match solver {
        Solver::Jacobi => true,
        Solver::PowerIteration => false,
        Solver::Auto => d <= JACOBI_MAX_DIM,
    };
    let (values, vectors) = if use_jacobi {
        let (vals, vecs) = jacobi_eigen(&cov);
        let order = descending_order(&vals);
        let values: Vec<f64> = order.iter().map(|&i| vals[i]).collect();
        let vectors: Vec<Array1<f64>> = order.iter().map(|&i| vecs.column(i).to_owned()).collect();
        (values, vectors)
    } else {
        power_deflation(&cov, k)
    };
    let mut pairs: Vec<(f64, Array1<f64>)> = values
        .into_iter()
        .zip(vectors)
        .map(|(v, mut c)| {
            sign_normalize(&mut c);
            (v.max(0.0), c)
        })
        .collect();
    order_ties(&mut pairs, trace);
    pairs.truncate(k);

    let mut components = Array2::zeros((k, d));
    for (i, (_, c)) in pairs.iter().enumerate() {
        components.row_mut(i).assign(c);
    }
    let eigenvalues: Vec<f64> = pairs.iter().map(|(v, _)| *v).collect();
    let explained_ratio = eigenvalues.iter().map(|v| v / trace).collect();
    Ok(PcaResult {
        components,
        eigenvalues,
        explained_ratio,
        mean,
        total_variance: trace,
        centered: center,
        n_samples: n,
    })
}

fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// Flips `c` so that its largest-magnitude coordinate (first one on ties) is
/// positive.
fn sign_normalize(c: &mut Array1<f64>) {
    let mut best = 0usize;
    for (i, v) in c.iter().enumerate() {
        if v.abs() > c[best].abs() {
            best = i;
        }
    }
    if c[best] < 0.0 {
        c.mapv_inplace(|v| -v);
    }
}

fn lexicographic_desc(a: &Array1<f64>, b: &Array1<f64>) -> Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match y.total_cmp(x) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    Ordering::Equal
}

/// Within runs of numerically equal eigenvalues, order components by their
/// first differing coordinate, larger first.
fn order_ties(pairs: &mut [(f64, Array1<f64>)], trace: f64) {
    let tol = 1e-12 * trace.max(1.0);
    let mut start = 0;
    while start < pairs.len() {
        let mut end = start + 1;
        while end < pairs.len() && (pairs[end - 1].0 - pairs[end].0).abs() <= tol {
            end += 1;
        }
        pairs[start..end].sort_by(|a, b| lexicographic_desc(&a.1, &b.1));
        start = end;
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns the
/// eigenvalues and a matrix whose columns are the eigenvectors.
pub fn jacobi_eigen(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut a = a.clone();
    let mut v = Array2::<f64>::eye(n);
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[[p, q]] * a[[p, q]];
            }
        }
        if off.sqrt() <= 1e-15 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..n {
                    let arp = a[[r, p]];
                    let arq = a[[r, q]];
                    a[[r, p]] = c * arp - s * arq;
                    a[[r, q]] = s * arp + c * arq;
                }
                for r in 0..n {
                    let apr = a[[p, r]];
                    let aqr = a[[q, r]];
                    a[[p, r]] = c * apr - s * aqr;
                    a[[q, r]] = s * apr + c * aqr;
                }
                for r in 0..n {
                    let vrp = v[[r, p]];
                    let vrq = v[[r, q]];
                    v[[r, p]] = c * vrp - s * vrq;
                    v[[r, q]] = s * vrp + c * vrq;
                }
            }
        }
    }
    ((0..n).map(|i| a[[i, i]]).collect(), v)
}

const POWER_TOL: f64 = 1e-12;
// The Rayleigh quotient settles quadratically faster than the vector, so the
// iterate must also stop moving.
const POWER_VECTOR_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 10_000;

/// Top `k` eigenpairs by power iteration with deflation.
fn power_deflation(cov: &Array2<f64>, k: usize) -> (Vec<f64>, Vec<Array1<f64>>) {
    let d = cov.nrows();
    let mut c = cov.clone();
    let mut values = Vec::with_capacity(k);
    let mut vectors: Vec<Array1<f64>> = Vec::with_capacity(k);
    let norm_scale = cov.diag().sum().max(f64::MIN_POSITIVE);
    for _ in 0..k {
        let mut seed = 0usize;
        let (lambda, v) = loop {
            let mut v = Array1::zeros(d);
            v[seed % d] = 1.0;
            if seed >= d {
                // Every basis vector stagnated: fall back to a dense start.
                v.fill(1.0);
                v[seed % d] += (seed / d) as f64;
            }
            orthogonalize(&mut v, &vectors);
            let nv = v.dot(&v).sqrt();
            if nv < 1e-8 {
                seed += 1;
                continue;
            }
            v /= nv;
            let mut lambda = v.dot(&c.dot(&v));
            let mut stagnated = false;
            for _ in 0..POWER_MAX_ITERS {
                let mut w = c.dot(&v);
                orthogonalize(&mut w, &vectors);
                let nw = w.dot(&w).sqrt();
                if nw <= 1e-14 * norm_scale {
                    stagnated = true;
                    break;
                }
                w /= nw;
                let next = w.dot(&c.dot(&w));
                let moved = (&w - &v).iter().fold(0.0f64, |m, x| m.max(x.abs()));
                v = w;
                let done = (next - lambda).abs() <= POWER_TOL * next.abs().max(1.0) && moved <= POWER_VECTOR_TOL;
                lambda = next;
                if done {
                    break;
                }
            }
            if stagnated && seed < 2 * d {
                // The start vector lies in the null space of what is left;
                // either nothing is left or a different start finds it.
                if vectors.len() + 1 >= d || c.iter().all(|x| x.abs() <= 1e-14 * norm_scale) {
                    break (0.0, first_orthogonal(d, &vectors));
                }
                seed += 1;
                continue;
            }
            break (lambda, v);
        };
        for i in 0..d {
            for j in 0..d {
                c[[i, j]] -= lambda * v[i] * v[j];
            }
        }
        values.push(lambda);
        vectors.push(v);
    }
    (values, vectors)
}

fn orthogonalize(v: &mut Array1<f64>, basis: &[Array1<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let p = v.dot(b);
            v.scaled_add(-p, b);
        }
    }
}

fn first_orthogonal(d: usize, basis: &[Array1<f64>]) -> Array1<f64> {
    let mut best = Array1::zeros(d);
    let mut best_norm = 0.0;
    for i in 0..d {
        let mut v = Array1::zeros(d);
        v[i] = 1.0;
        orthogonalize(&mut v, basis);
        let n = v.dot(&v).sqrt();
        if n > best_norm + 1e-9 {
            best_norm = n;
            best = v / n;
        }
    }
    best
}

fn check_j(pca: &PcaResult, j: usize) -> Result<(), SubspaceError> {
    if j > pca.k() {
        return Err(SubspaceError::InvalidJ { j, k: pca.k() });
    }
    Ok(())
}

/// Coordinates of each row of `vectors` (minus the fitted mean) on the first
/// `j` components.
pub fn project(vectors: ArrayView2<'_, f64>, pca: &PcaResult, j: usize) -> Result<Array2<f64>, SubspaceError> {
    check_j(pca, j)?;
    if vectors.ncols() != pca.dim() {
        return Err(SubspaceError::DimMismatch {
            expected: pca.dim(),
            got: vectors.ncols(),
        });
    }
    let centered = &vectors - &pca.mean;
    Ok(centered.dot(&pca.components.slice(s![..j, ..]).t()))
}

/// Removes the first `j` components from `v`.
pub fn project_out(v: ArrayView1<'_, f64>, pca: &PcaResult, j: usize) -> Result<Array1<f64>, SubspaceError> {
    check_j(pca, j)?;
    if v.len() != pca.dim() {
        return Err(SubspaceError::DimMismatch {
            expected: pca.dim(),
            got: v.len(),
        });
    }
    let centered = &v - &pca.mean;
    let mut out = v.to_owned();
    for c in pca.components.rows().into_iter().take(j) {
        out.scaled_add(-centered.dot(&c), &c);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub sentence_id: String,
    pub surface: String,
    pub context_gender: Gender,
    pub pc1: f64,
    pub pc2: f64,
}

/// Gender of the context of variant `a`: `M` when `a` holds a male pronoun,
/// `F` when `b` does. `None` when neither does.
pub fn context_gender(pair: &AlignedPair, lexicon: &GenderLexicon) -> Option<Gender> {
    let has_male = |tokens: &[String]| {
        tokens
            .iter()
            .any(|t| lexicon.pronoun_gender(&t.to_lowercase()) == Some(Gender::Male))
    };
    if has_male(&pair.tokens_a) {
        Some(Gender::Male)
    } else if has_male(&pair.tokens_b) {
        Some(Gender::Female)
    } else {
        None
    }
}

/// Projects the target vector of both variants of every pair onto the first
/// two components. Pairs whose context gender cannot be determined are
/// skipped; the count of skipped pairs is returned alongside.
pub fn scatter(
    pairs: &[AlignedPair],
    targets: &HashMap<String, usize>,
    pca: &PcaResult,
    lexicon: &GenderLexicon,
) -> Result<(Vec<ScatterPoint>, usize), SubspaceError> {
    let j = pca.k().min(2);
    let mut points = Vec::with_capacity(pairs.len() * 2);
    let mut skipped = 0;
    for pair in pairs {
        let t = *targets
            .get(&pair.sentence_id)
            .ok_or_else(|| SubspaceError::MissingTarget(pair.sentence_id.clone()))?;
        if t >= pair.len() {
            return Err(SubspaceError::TargetOutOfBounds {
                id: pair.sentence_id.clone(),
                index: t,
                len: pair.len(),
            });
        }
        let Some(gender_a) = context_gender(pair, lexicon) else {
            skipped += 1;
            continue;
        };
        for (vectors, tokens, gender) in [
            (&pair.vectors_a, &pair.tokens_a, gender_a),
            (&pair.vectors_b, &pair.tokens_b, gender_a.opposite()),
        ] {
            let row = vectors.row(t).mapv(f64::from);
            let coords = project(row.view().insert_axis(Axis(0)), pca, j)?;
            points.push(ScatterPoint {
                sentence_id: pair.sentence_id.clone(),
                surface: tokens[t].clone(),
                context_gender: gender,
                pc1: coords[[0, 0]],
                pc2: if j > 1 { coords[[0, 1]] } else { 0.0 },
            });
        }
    }
    Ok((points, skipped))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn scatter_csv(points: &[ScatterPoint]) -> String {
    let mut out = String::from("sentence_id,surface,context_gender,pc1,pc2\n");
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{}",
            csv_field(&p.sentence_id),
            csv_field(&p.surface),
            p.context_gender.code(),
            p.pc1,
            p.pc2
        )
        .unwrap();
    }
    out
}
