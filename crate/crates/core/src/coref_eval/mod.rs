//! Coreference scoring on WinoBias-style pro/anti-stereotype pairs.

mod metrics;
mod winobias;

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use metrics::{max_weight_assignment, phi4_matrix, score, score_counts, Counts, Metric, Prf, ScoreCounts};
pub use winobias::{parse_brackets, parse_winobias, Condition, TaskType, WinoBiasInstance, GENDERED_PRONOUNS};

use crate::{par, round1};

pub const DEFAULT_AR_ROUNDS: usize = 10_000;
/// Randomization rounds per independently seeded block.
pub const AR_BLOCK: usize = 1024;

#[derive(Debug, thiserror::Error)]
pub enum CorefError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("malformed clustering: {0}")]
    Clustering(String),
    #[error("span ({start},{end}) out of bounds for {len} tokens")]
    OutOfBounds { start: usize, end: usize, len: usize },
    #[error("instance ids without a partner; only pro: {only_pro:?}; only anti: {only_anti:?}")]
    Unpaired {
        only_pro: Vec<String>,
        only_anti: Vec<String>,
    },
    #[error("no prediction for instance `{0}`")]
    MissingPrediction(String),
    #[error("duplicate prediction for instance `{0}`")]
    DuplicatePrediction(String),
    #[error("randomization test needs at least one pair")]
    EmptyPairing,
    #[error("randomization test needs at least one round")]
    NoRounds,
    #[error("pair {index}: score {value} outside [0, 1]")]
    ScoreRange { index: usize, value: f64 },
}

/// Inclusive token span, serialized as `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Span {
        Span { start, end }
    }
}

impl From<[usize; 2]> for Span {
    fn from([start, end]: [usize; 2]) -> Span {
        Span { start, end }
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> [usize; 2] {
        [s.start, s.end]
    }
}

/// Mentions partitioned into clusters.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Clustering {
    clusters: Vec<Vec<Span>>,
}

impl Clustering {
    pub fn new(clusters: Vec<Vec<Span>>) -> Result<Clustering, CorefError> {
        let c = Clustering { clusters };
        c.validate()?;
        Ok(c)
    }

    pub fn clusters(&self) -> &[Vec<Span>] {
        &self.clusters
    }

    pub fn mention_count(&self) -> usize {
        self.clusters.iter().map(Vec::len).sum()
    }

    /// Every cluster non-empty, every mention well-formed and in one cluster.
    pub fn validate(&self) -> Result<(), CorefError> {
        let mut seen = HashSet::new();
        for c in &self.clusters {
            if c.is_empty() {
                return Err(CorefError::Clustering("empty cluster".into()));
            }
            for s in c {
                if s.start > s.end {
                    return Err(CorefError::Clustering(format!(
                        "span ({},{}) ends before it starts",
                        s.start, s.end
                    )));
                }
                if !seen.insert(*s) {
                    return Err(CorefError::Clustering(format!(
                        "mention ({},{}) appears more than once",
                        s.start, s.end
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn check_bounds(&self, n_tokens: usize) -> Result<(), CorefError> {
        for s in self.clusters.iter().flatten() {
            if s.end >= n_tokens {
                return Err(CorefError::OutOfBounds {
                    start: s.start,
                    end: s.end,
                    len: n_tokens,
                });
            }
        }
        Ok(())
    }
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub instance_id: String,
    pub clusters: Clustering,
}

pub fn parse_predictions(text: &str) -> Result<HashMap<String, Clustering>, CorefError> {
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction = serde_json::from_str(line).map_err(|e| CorefError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        p.clusters.validate().map_err(|e| CorefError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if out.insert(p.instance_id.clone(), p.clusters).is_some() {
            return Err(CorefError::DuplicatePrediction(p.instance_id));
        }
    }
    Ok(out)
}

pub fn predictions_jsonl(predictions: &[Prediction]) -> String {
    let mut out = String::new();
    for p in predictions {
        out.push_str(&serde_json::to_string(p).expect("prediction serializes"));
        out.push('\n');
    }
    out
}

pub fn gold_clustering(instance: &WinoBiasInstance) -> Clustering {
    Clustering {
        clusters: vec![vec![instance.occupation, instance.pronoun]],
    }
}

/// Counts for each instance, in input order.
pub fn instance_counts(
    instances: &[WinoBiasInstance],
    predictions: &HashMap<String, Clustering>,
) -> Result<Vec<ScoreCounts>, CorefError> {
    instances
        .iter()
        .map(|inst| {
            let sys = predictions
                .get(&inst.instance_id)
                .ok_or_else(|| CorefError::MissingPrediction(inst.instance_id.clone()))?;
            sys.check_bounds(inst.tokens.len())?;
            Ok(score_counts(&gold_clustering(inst), sys))
        })
        .collect()
}

/// Approximate randomization test on paired scores. Returns
/// `(#{rounds with statistic >= observed} + 1) / (rounds + 1)`.
///
/// Rounds are grouped in blocks of [`AR_BLOCK`]; block `i` draws from a
/// ChaCha stream seeded with `seed` on stream `i`, so the result is the same
/// for any number of threads.
pub fn ar_test(pairs: &[(f64, f64)], rounds: usize, seed: u64, threads: usize) -> Result<f64, CorefError> {
    if pairs.is_empty() {
        return Err(CorefError::EmptyPairing);
    }
    if rounds == 0 {
        return Err(CorefError::NoRounds);
    }
    for (index, &(a, b)) in pairs.iter().enumerate() {
        for value in [a, b] {
            if !(0.0..=1.0).contains(&value) {
                return Err(CorefError::ScoreRange { index, value });
            }
        }
    }
    let n = pairs.len() as f64;
    let diffs: Vec<f64> = pairs.iter().map(|(a, b)| a - b).collect();
    let observed = diffs.iter().sum::<f64>().abs() / n;
    let threshold = observed - 1e-12;
    let blocks = rounds.div_ceil(AR_BLOCK);
    let counts = par::map_range(blocks, threads, |block| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(block as u64);
        let todo = AR_BLOCK.min(rounds - block * AR_BLOCK);
        let mut hits = 0usize;
        for _ in 0..todo {
            let mut sum = 0.0;
            for d in &diffs {
                if rng.gen::<bool>() {
                    sum -= d;
                } else {
                    sum += d;
                }
            }
            if sum.abs() / n >= threshold {
                hits += 1;
            }
        }
        hits
    });
    let hits: usize = counts.into_iter().sum();
    Ok((hits + 1) as f64 / (rounds + 1) as f64)
}

/// Scores for one condition under every metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionScore {
    pub instances: usize,
    pub counts: ScoreCounts,
    pub muc: Prf,
    pub b3: Prf,
    pub ceafe: Prf,
    pub conll: Prf,
}

impl ConditionScore {
    fn new(instances: usize, counts: ScoreCounts) -> ConditionScore {
        ConditionScore {
            instances,
            counts,
            muc: counts.prf(Metric::Muc),
            b3: counts.prf(Metric::B3),
            ceafe: counts.prf(Metric::CeafE),
            conll: counts.prf(Metric::Conll),
        }
    }

    pub fn get(&self, metric: Metric) -> Prf {
        match metric {
            Metric::Muc => self.muc,
            Metric::B3 => self.b3,
            Metric::CeafE => self.ceafe,
            Metric::Conll => self.conll,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: Metric,
    pub task_type: TaskType,
    pub pro: ConditionScore,
    pub anti: ConditionScore,
    /// Pro and anti F1 of `metric`, one decimal.
    pub pro_f1: f64,
    pub anti_f1: f64,
    pub avg_f1: f64,
    pub abs_diff: f64,
    pub p_value: f64,
    pub ar_rounds: usize,
    pub seed: u64,
}

impl EvalReport {
    /// `condition,subset,pro,anti,avg,abs_diff,p_value` header plus one row.
    pub fn csv(&self, condition: &str) -> String {
        let mut out = String::from("condition,subset,pro,anti,avg,abs_diff,p_value\n");
        writeln!(
            out,
            "{},{},{:.1},{:.1},{:.1},{:.1},{}",
            condition,
            self.task_type.name(),
            self.pro_f1,
            self.anti_f1,
            self.avg_f1,
            self.abs_diff,
            self.p_value
        )
        .unwrap();
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReportOptions {
    pub metric: Metric,
    pub rounds: usize,
    pub seed: u64,
    pub threads: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            metric: Metric::Conll,
            rounds: DEFAULT_AR_ROUNDS,
            seed: 0,
            threads: 1,
        }
    }
}

/// Pro/anti F1, their average and gap, and the randomization p-value over
/// instance pairs matched by id.
///
/// Per-condition scores micro-aggregate metric counts over instances. Average
/// and gap are computed from the one-decimal condition F1s.
pub fn bias_report(
    pro: &[WinoBiasInstance],
    pro_predictions: &HashMap<String, Clustering>,
    anti: &[WinoBiasInstance],
    anti_predictions: &HashMap<String, Clustering>,
    options: ReportOptions,
) -> Result<EvalReport, CorefError> {
    let pro_ids: HashSet<&str> = pro.iter().map(|i| i.instance_id.as_str()).collect();
    let anti_ids: HashSet<&str> = anti.iter().map(|i| i.instance_id.as_str()).collect();
    if pro_ids != anti_ids || pro_ids.len() != pro.len() || anti_ids.len() != anti.len() {
        let only_pro: Vec<String> = pro
            .iter()
            .filter(|i| !anti_ids.contains(i.instance_id.as_str()))
            .map(|i| i.instance_id.clone())
            .collect();
        let only_anti: Vec<String> = anti
            .iter()
            .filter(|i| !pro_ids.contains(i.instance_id.as_str()))
            .map(|i| i.instance_id.clone())
            .collect();
        if !only_pro.is_empty() || !only_anti.is_empty() {
            return Err(CorefError::Unpaired { only_pro, only_anti });
        }
        return Err(CorefError::Parse {
            line: 0,
            message: "duplicate instance ids".into(),
        });
    }

    let pro_counts = instance_counts(pro, pro_predictions)?;
    let anti_counts = instance_counts(anti, anti_predictions)?;
    let pro_score = ConditionScore::new(pro.len(), pro_counts.iter().copied().sum());
    let anti_score = ConditionScore::new(anti.len(), anti_counts.iter().copied().sum());

    let anti_pos: HashMap<&str, usize> = anti
        .iter()
        .enumerate()
        .map(|(i, x)| (x.instance_id.as_str(), i))
        .collect();
    let pairs: Vec<(f64, f64)> = pro
        .iter()
        .zip(&pro_counts)
        .map(|(inst, c)| {
            let a = &anti_counts[anti_pos[inst.instance_id.as_str()]];
            (
                (c.prf(options.metric).f1 / 100.0).clamp(0.0, 1.0),
                (a.prf(options.metric).f1 / 100.0).clamp(0.0, 1.0),
            )
        })
        .collect();
    let p_value = ar_test(&pairs, options.rounds, options.seed, options.threads)?;

    let pro_f1 = round1(pro_score.get(options.metric).f1);
    let anti_f1 = round1(anti_score.get(options.metric).f1);
    Ok(EvalReport {
        metric: options.metric,
        task_type: pro
            .first()
            .or(anti.first())
            .map_or(TaskType::SemanticsOnly, |i| i.task_type),
        pro: pro_score,
        anti: anti_score,
        pro_f1,
        anti_f1,
        avg_f1: round1((pro_f1 + anti_f1) / 2.0),
        abs_diff: round1((pro_f1 - anti_f1).abs()),
        p_value,
        ar_rounds: options.rounds,
        seed: options.seed,
    })
}
