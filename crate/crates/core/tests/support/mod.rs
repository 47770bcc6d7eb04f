//! Reference implementations used as test oracles. Written against the
//! textbook definitions, sharing no code with the library.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::HashSet;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn gaussian_matrix(rng: &mut impl Rng, n: usize, d: usize, sigma: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| sigma * gaussian(rng))
}

/// Small dense linear solve with partial pivoting. `None` when singular.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

pub fn rbf_kernel(x: &Array2<f64>, gamma: f64) -> Vec<Vec<f64>> {
    let n = x.nrows();
    let mut k = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let d2: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
            k[i][j] = (-gamma * d2).exp();
        }
    }
    k
}

/// Minimum of `1/2 a'Qa` with `Q_ij = y_i y_j K_ij` over `0 <= a <= 1/l`,
/// `sum y_i a_i = 0`, `sum a_i = nu`, by enumerating every assignment of
/// variables to lower bound, upper bound or free and solving the equality
/// constrained problem on each face.
pub fn nu_svc_dual_oracle(k: &[Vec<f64>], y: &[f64], nu: f64) -> Option<f64> {
    let n = y.len();
    let c = 1.0 / n as f64;
    let q = |i: usize, j: usize| y[i] * y[j] * k[i][j];
    let objective = |a: &[f64]| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += a[i] * a[j] * q(i, j);
            }
        }
        0.5 * s
    };
    let mut best: Option<f64> = None;
    for code in 0..3usize.pow(n as u32) {
        let mut state = Vec::with_capacity(n);
        let mut rest = code;
        for _ in 0..n {
            state.push(rest % 3);
            rest /= 3;
        }
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        let mut a: Vec<f64> = state.iter().map(|&s| if s == 1 { c } else { 0.0 }).collect();
        if !free.is_empty() {
            let fixed: Vec<usize> = (0..n).filter(|&i| state[i] != 2).collect();
            let rhs_y = -fixed.iter().map(|&i| y[i] * a[i]).sum::<f64>();
            let rhs_1 = nu - fixed.iter().map(|&i| a[i]).sum::<f64>();
            let mixed = free.iter().any(|&i| y[i] > 0.0) && free.iter().any(|&i| y[i] < 0.0);
            // Both constraints are independent on the free set only when it
            // holds both labels; otherwise keep the sum constraint and check
            // the other afterwards.
            let rows: Vec<(Vec<f64>, f64)> = if mixed {
                vec![
                    (free.iter().map(|&i| y[i]).collect(), rhs_y),
                    (vec![1.0; free.len()], rhs_1),
                ]
            } else {
                vec![(vec![1.0; free.len()], rhs_1)]
            };
            let f = free.len();
            let m = f + rows.len();
            let mut mat = vec![vec![0.0; m]; m];
            let mut rhs = vec![0.0; m];
            for (r, &i) in free.iter().enumerate() {
                for (cc, &j) in free.iter().enumerate() {
                    mat[r][cc] = q(i, j);
                }
                rhs[r] = -fixed.iter().map(|&j| q(i, j) * a[j]).sum::<f64>();
            }
            for (ci, (coef, value)) in rows.iter().enumerate() {
                for (r, v) in coef.iter().enumerate() {
                    mat[r][f + ci] = *v;
                    mat[f + ci][r] = *v;
                }
                rhs[f + ci] = *value;
            }
            let Some(sol) = solve_linear(mat, rhs) else { continue };
            for (r, &i) in free.iter().enumerate() {
                a[i] = sol[r];
            }
        }
        let in_box = a.iter().all(|&v| v >= -1e-12 && v <= c + 1e-12);
        let eq_y = a.iter().zip(y).map(|(a, y)| a * y).sum::<f64>().abs() < 1e-9;
        let eq_1 = (a.iter().sum::<f64>() - nu).abs() < 1e-9;
        if in_box && eq_y && eq_1 {
            let v = objective(&a);
            if best.is_none_or(|b| v < b) {
                best = Some(v);
            }
        }
    }
    best
}

/// `phi4(K, R) = 2|K ∩ R| / (|K| + |R|)` for clusters given as mention ids.
pub fn phi4(k: &[usize], r: &[usize]) -> f64 {
    let ks: HashSet<_> = k.iter().collect();
    let common = r.iter().filter(|m| ks.contains(m)).count();
    2.0 * common as f64 / (k.len() + r.len()) as f64
}

/// Best total weight of a one-to-one matching, by trying every injection of
/// the smaller side into the larger one.
pub fn brute_force_assignment(w: &[Vec<f64>]) -> f64 {
    let rows = w.len();
    let cols = w.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    let transpose = rows > cols;
    let (small, large) = if transpose { (cols, rows) } else { (rows, cols) };
    let at = |i: usize, j: usize| if transpose { w[j][i] } else { w[i][j] };
    fn rec(i: usize, small: usize, large: usize, used: &mut Vec<bool>, at: &dyn Fn(usize, usize) -> f64) -> f64 {
        if i == small {
            return 0.0;
        }
        let mut best = f64::NEG_INFINITY;
        for j in 0..large {
            if !used[j] {
                used[j] = true;
                best = best.max(at(i, j) + rec(i + 1, small, large, used, at));
                used[j] = false;
            }
        }
        best
    }
    rec(0, small, large, &mut vec![false; large], &at)
}

/// Exact randomization p-value: the fraction of all `2^n` swap patterns whose
/// statistic reaches the observed one.
pub fn exact_ar_p(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len();
    let d: Vec<f64> = pairs.iter().map(|(a, b)| a - b).collect();
    let observed = d.iter().sum::<f64>().abs() / n as f64;
    let mut hits = 0u64;
    for mask in 0..(1u64 << n) {
        let s: f64 = d
            .iter()
            .enumerate()
            .map(|(i, v)| if mask >> i & 1 == 1 { -v } else { *v })
            .sum();
        if s.abs() / n as f64 >= observed - 1e-12 {
            hits += 1;
        }
    }
    hits as f64 / (1u64 << n) as f64
}

/// Covariance (divisor `n - 1`, centered) eigen-decomposition via nalgebra,
/// eigenvalues descending.
pub fn covariance_eigen(x: &Array2<f64>) -> (Vec<f64>, Vec<Array1<f64>>) {
    let (n, d) = x.dim();
    let mean: Vec<f64> = (0..d).map(|j| x.column(j).sum() / n as f64).collect();
    let mut cov = nalgebra::DMatrix::<f64>::zeros(d, d);
    for r in x.rows() {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (r[i] - mean[i]) * (r[j] - mean[j]) / (n as f64 - 1.0);
            }
        }
    }
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = order
        .iter()
        .map(|&i| Array1::from_iter(eig.eigenvectors.column(i).iter().copied()))
        .collect();
    (values, vectors)
}

/// Random orthogonal matrix (QR of a Gaussian matrix, signs fixed).
pub fn random_rotation(rng: &mut impl Rng, d: usize) -> Array2<f64> {
    let g = nalgebra::DMatrix::<f64>::from_fn(d, d, |_, _| gaussian(rng));
    let qr = g.qr();
    let q = qr.q();
    let r = qr.r();
    Array2::from_shape_fn((d, d), |(i, j)| q[(i, j)] * r[(j, j)].signum())
}

/// Mention embeddings carrying a gender signal along the first axis under a
/// fixed norm budget: the signal coordinate is `s_g * a_g + sqrt(1 - a_g^2) * 0.4 * z`
/// with the male magnitude `a_M` twice the female one, so a stronger signal
/// leaves less room for context noise. Other coordinates are `N(0, 0.3^2)`
/// for both groups. Labels are +1 for male.
pub fn gender_signal_data(n_per_class: usize, d: usize, a_female: f64, seed: u64) -> (Array2<f64>, Vec<i8>) {
    let mut r = rng(seed);
    let a_male = 2.0 * a_female;
    assert!(a_male < 1.0);
    let n = 2 * n_per_class;
    let mut x = Array2::zeros((n, d));
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let male = i % 2 == 0;
        let (sign, a) = if male { (1.0, a_male) } else { (-1.0, a_female) };
        for j in 1..d {
            x[[i, j]] = 0.3 * gaussian(&mut r);
        }
        x[[i, 0]] = sign * a + (1.0 - a * a).sqrt() * 0.4 * gaussian(&mut r);
        y.push(if male { 1 } else { -1 });
    }
    (x, y)
}

/// Two Gaussian blobs separated by a wide gap along the first axis.
pub fn separable_data(n_per_class: usize, d: usize, seed: u64) -> (Array2<f64>, Vec<i8>) {
    let mut r = rng(seed);
    let n = 2 * n_per_class;
    let mut x = Array2::zeros((n, d));
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label: i8 = if i % 2 == 0 { 1 } else { -1 };
        for j in 0..d {
            x[[i, j]] = 0.3 * gaussian(&mut r);
        }
        x[[i, 0]] = label as f64 * (2.0 + r.gen::<f64>());
        y.push(label);
    }
    (x, y)
}

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

/// MUC, B-cubed and CEAFe F1 (percent) computed from their definitions.
/// Clusters are lists of mention ids; the two sides may cover different
/// mentions.
pub fn coref_f1_oracle(gold: &[Vec<usize>], sys: &[Vec<usize>]) -> [f64; 3] {
    fn cluster_of(c: &[Vec<usize>], m: usize) -> Option<usize> {
        c.iter().position(|k| k.contains(&m))
    }
    fn muc(key: &[Vec<usize>], resp: &[Vec<usize>]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for k in key {
            let mut parts: Vec<usize> = Vec::new();
            let mut alone = 0;
            for &m in k {
                match cluster_of(resp, m) {
                    Some(i) if !parts.contains(&i) => parts.push(i),
                    Some(_) => {}
                    None => alone += 1,
                }
            }
            num += (k.len() - parts.len() - alone) as f64;
            den += (k.len() - 1) as f64;
        }
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    }
    fn b3(key: &[Vec<usize>], resp: &[Vec<usize>]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for k in key {
            for &m in k {
                let shared = cluster_of(resp, m).map_or(0, |i| k.iter().filter(|x| resp[i].contains(x)).count());
                num += shared as f64 / k.len() as f64;
                den += 1.0;
            }
        }
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    }
    fn f1(p: f64, r: f64) -> f64 {
        if p + r == 0.0 {
            0.0
        } else {
            100.0 * 2.0 * p * r / (p + r)
        }
    }
    let w: Vec<Vec<f64>> = gold.iter().map(|k| sys.iter().map(|r| phi4(k, r)).collect()).collect();
    let phi = brute_force_assignment(&w);
    let ceaf_p = if sys.is_empty() { 0.0 } else { phi / sys.len() as f64 };
    let ceaf_r = if gold.is_empty() { 0.0 } else { phi / gold.len() as f64 };
    [
        f1(muc(sys, gold), muc(gold, sys)),
        f1(b3(sys, gold), b3(gold, sys)),
        f1(ceaf_p, ceaf_r),
    ]
}

/// `n` WinoBias-style lines, `i [The X] asked the Y for help because [he] was busy .`
/// Gold spans are (0,1) and (8,8).
pub fn winobias_lines(n: usize, pronoun: &str) -> String {
    (0..n)
        .map(|i| format!("{i} [The developer] asked the nurse for help because [{pronoun}] was busy .\n"))
        .collect()
}

/// Predictions for [`winobias_lines`]: instance `i` is resolved correctly when
/// `correct(i)`; otherwise the pronoun is linked to nothing and a spurious
/// cluster is predicted, so every metric scores the instance as 0.
pub fn winobias_predictions(n: usize, correct: impl Fn(usize) -> bool) -> String {
    (0..n)
        .map(|i| {
            let clusters = if correct(i) {
                "[[[0,1],[8,8]]]"
            } else {
                "[[[3,4],[6,6]]]"
            };
            format!("{{\"instance_id\":\"{i}\",\"clusters\":{clusters}}}\n")
        })
        .collect()
}

/// Random partition of a random subset of `0..universe` into at most
/// `max_clusters` clusters.
pub fn random_partition(r: &mut impl Rng, universe: usize, max_clusters: usize) -> Vec<Vec<usize>> {
    let k = r.gen_range(1..=max_clusters);
    let mut clusters = vec![Vec::new(); k];
    for m in 0..universe {
        if r.gen_bool(0.8) {
            clusters[r.gen_range(0..k)].push(m);
        }
    }
    clusters.retain(|c| !c.is_empty());
    if clusters.is_empty() {
        clusters.push(vec![0]);
    }
    clusters
}
