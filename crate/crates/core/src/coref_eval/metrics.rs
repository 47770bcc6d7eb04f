//! MUC, B-cubed, CEAF-e and their CoNLL average.
//!
//! Scores are kept as numerator/denominator pairs so that several documents
//! can be micro-aggregated by summing before the final division.

use std::collections::HashMap;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use super::{Clustering, CorefError, Span};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Muc,
    B3,
    CeafE,
    Conll,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Muc, Metric::B3, Metric::CeafE, Metric::Conll];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Muc => "muc",
            Metric::B3 => "b3",
            Metric::CeafE => "ceafe",
            Metric::Conll => "conll",
        }
    }

    pub fn from_name(name: &str) -> Option<Metric> {
        Metric::ALL.into_iter().find(|m| m.name() == name.to_ascii_lowercase())
    }
}

/// Precision, recall and F1 as percentages.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
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
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub p_num: f64,
    pub p_den: f64,
    pub r_num: f64,
    pub r_den: f64,
}

impl Counts {
    pub fn prf(&self) -> Prf {
        let p = ratio(self.p_num, self.p_den);
        let r = ratio(self.r_num, self.r_den);
        Prf {
            precision: 100.0 * p,
            recall: 100.0 * r,
            f1: 100.0 * f1(p, r),
        }
    }
}

impl Add for Counts {
    type Output = Counts;
    fn add(self, o: Counts) -> Counts {
        Counts {
            p_num: self.p_num + o.p_num,
            p_den: self.p_den + o.p_den,
            r_num: self.r_num + o.r_num,
            r_den: self.r_den + o.r_den,
        }
    }
}

/// Counts for the three base metrics of one or more documents.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreCounts {
    pub muc: Counts,
    pub b3: Counts,
    pub ceafe: Counts,
}

impl ScoreCounts {
    pub fn prf(&self, metric: Metric) -> Prf {
        match metric {
            Metric::Muc => self.muc.prf(),
            Metric::B3 => self.b3.prf(),
            Metric::CeafE => self.ceafe.prf(),
            Metric::Conll => {
                let parts = [self.muc.prf(), self.b3.prf(), self.ceafe.prf()];
                let mean = |f: fn(&Prf) -> f64| parts.iter().map(f).sum::<f64>() / 3.0;
                Prf {
                    precision: mean(|p| p.precision),
                    recall: mean(|p| p.recall),
                    f1: mean(|p| p.f1),
                }
            }
        }
    }
}

impl Add for ScoreCounts {
    type Output = ScoreCounts;
    fn add(self, o: ScoreCounts) -> ScoreCounts {
        ScoreCounts {
            muc: self.muc + o.muc,
            b3: self.b3 + o.b3,
            ceafe: self.ceafe + o.ceafe,
        }
    }
}

impl AddAssign for ScoreCounts {
    fn add_assign(&mut self, o: ScoreCounts) {
        *self = *self + o;
    }
}

impl std::iter::Sum for ScoreCounts {
    fn sum<I: Iterator<Item = ScoreCounts>>(iter: I) -> ScoreCounts {
        iter.fold(ScoreCounts::default(), Add::add)
    }
}

fn cluster_index(c: &Clustering) -> HashMap<Span, usize> {
    let mut m = HashMap::new();
    for (i, cluster) in c.clusters().iter().enumerate() {
        for s in cluster {
            m.insert(*s, i);
        }
    }
    m
}

/// `sum |K| - |partitions of K by other|` over `key`, and `sum |K| - 1`.
fn muc_side(key: &Clustering, other: &Clustering) -> (f64, f64) {
    let index = cluster_index(other);
    let (mut num, mut den) = (0usize, 0usize);
    for cluster in key.clusters() {
        let mut parts = std::collections::HashSet::new();
        let mut unmatched = 0;
        for s in cluster {
            match index.get(s) {
                Some(i) => {
                    parts.insert(*i);
                }
                None => unmatched += 1,
            }
        }
        num += cluster.len() - (parts.len() + unmatched);
        den += cluster.len() - 1;
    }
    (num as f64, den as f64)
}

fn b3_side(key: &Clustering, other: &Clustering) -> (f64, f64) {
    let index = cluster_index(other);
    let mut num = 0.0;
    let mut den = 0usize;
    for cluster in key.clusters() {
        let mut overlap: HashMap<usize, usize> = HashMap::new();
        for s in cluster {
            if let Some(i) = index.get(s) {
                *overlap.entry(*i).or_default() += 1;
            }
        }
        let k = cluster.len() as f64;
        num += overlap.values().map(|&o| (o * o) as f64 / k).sum::<f64>();
        den += cluster.len();
    }
    (num, den as f64)
}

/// `phi4(K, S) = 2 |K n S| / (|K| + |S|)` for every gold/system pair.
pub fn phi4_matrix(gold: &Clustering, system: &Clustering) -> Vec<Vec<f64>> {
    let index = cluster_index(system);
    gold.clusters()
        .iter()
        .map(|k| {
            let mut row = vec![0.0; system.clusters().len()];
            let mut overlap = vec![0usize; system.clusters().len()];
            for s in k {
                if let Some(&i) = index.get(s) {
                    overlap[i] += 1;
                }
            }
            for (j, cluster) in system.clusters().iter().enumerate() {
                row[j] = 2.0 * overlap[j] as f64 / (k.len() + cluster.len()) as f64;
            }
            row
        })
        .collect()
}

/// Maximum-weight one-to-one assignment between rows and columns of a
/// non-negative rectangular matrix. Returns the total and, per row, the
/// column it was assigned (if any).
pub fn max_weight_assignment(weights: &[Vec<f64>]) -> (f64, Vec<Option<usize>>) {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return (0.0, vec![None; rows]);
    }
    // Square cost matrix for the potentials form of the Hungarian method.
    let n = rows.max(cols);
    let max = weights.iter().flatten().copied().fold(0.0f64, f64::max);
    let cost = |i: usize, j: usize| {
        if i < rows && j < cols {
            max - weights[i][j]
        } else {
            max
        }
    };
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![None; rows];
    let mut total = 0.0;
    for (jj, &row) in p[1..=n].iter().enumerate() {
        let i = row - 1;
        if i < rows && jj < cols {
            assignment[i] = Some(jj);
            total += weights[i][jj];
        }
    }
    (total, assignment)
}

pub fn score_counts(gold: &Clustering, system: &Clustering) -> ScoreCounts {
    let (mr_num, mr_den) = muc_side(gold, system);
    let (mp_num, mp_den) = muc_side(system, gold);
    let (br_num, br_den) = b3_side(gold, system);
    let (bp_num, bp_den) = b3_side(system, gold);
    let (phi, _) = max_weight_assignment(&phi4_matrix(gold, system));
    ScoreCounts {
        muc: Counts {
            p_num: mp_num,
            p_den: mp_den,
            r_num: mr_num,
            r_den: mr_den,
        },
        b3: Counts {
            p_num: bp_num,
            p_den: bp_den,
            r_num: br_num,
            r_den: br_den,
        },
        ceafe: Counts {
            p_num: phi,
            p_den: system.clusters().len() as f64,
            r_num: phi,
            r_den: gold.clusters().len() as f64,
        },
    }
}

pub fn score(gold: &Clustering, system: &Clustering, metric: Metric) -> Result<Prf, CorefError> {
    gold.validate()?;
    system.validate()?;
    Ok(score_counts(gold, system).prf(metric))
}
