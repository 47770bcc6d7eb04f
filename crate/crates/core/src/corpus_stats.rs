//! Streaming pronoun and pronoun/occupation co-occurrence counts.
//!
//! Co-occurrence is counted per sentence over all pairs: a sentence with two
//! male pronouns and two male-biased occupations adds 4 to the
//! `(male, male-biased)` cell. Occupations are matched as contiguous token
//! runs, longest match first, without overlap.

use std::collections::HashMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::lexicon::{Gender, GenderLexicon, Stereotype};
use crate::par;

/// Label stored in the JSON output describing how `cooc` was counted.
pub const COOC_COUNTING: &str = "sentence_pairs";

const SHARD_LINES: usize = 4096;
const READ_BATCH_LINES: usize = 1 << 16;

#[derive(Debug, thiserror::Error)]
pub enum StatsError {
    #[error("cannot merge stats built from different lexicons ({left} vs {right})")]
    LexiconMismatch { left: String, right: String },
    #[error("corpus read failed: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoocTable {
    pub male_with_male_biased: u64,
    pub male_with_female_biased: u64,
    pub female_with_male_biased: u64,
    pub female_with_female_biased: u64,
}

impl CoocTable {
    pub fn get(&self, pronoun: Gender, occupation: Stereotype) -> u64 {
        match (pronoun, occupation) {
            (Gender::Male, Stereotype::MaleBiased) => self.male_with_male_biased,
            (Gender::Male, Stereotype::FemaleBiased) => self.male_with_female_biased,
            (Gender::Female, Stereotype::MaleBiased) => self.female_with_male_biased,
            (Gender::Female, Stereotype::FemaleBiased) => self.female_with_female_biased,
        }
    }

    fn add(&mut self, pronoun: Gender, occupation: Stereotype, n: u64) {
        let cell = match (pronoun, occupation) {
            (Gender::Male, Stereotype::MaleBiased) => &mut self.male_with_male_biased,
            (Gender::Male, Stereotype::FemaleBiased) => &mut self.male_with_female_biased,
            (Gender::Female, Stereotype::MaleBiased) => &mut self.female_with_male_biased,
            (Gender::Female, Stereotype::FemaleBiased) => &mut self.female_with_female_biased,
        };
        *cell += n;
    }

    fn sum(&self, other: &CoocTable) -> CoocTable {
        CoocTable {
            male_with_male_biased: self.male_with_male_biased + other.male_with_male_biased,
            male_with_female_biased: self.male_with_female_biased + other.male_with_female_biased,
            female_with_male_biased: self.female_with_male_biased + other.female_with_male_biased,
            female_with_female_biased: self.female_with_female_biased + other.female_with_female_biased,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub male_total: u64,
    pub female_total: u64,
    pub cooc: CoocTable,
    pub cooc_counting: String,
    pub sentences_seen: u64,
    pub tokens_seen: u64,
    pub lexicon_hash: String,
}

impl CorpusStats {
    /// The identity element for [`merge`].
    pub fn zero(lexicon_hash: impl Into<String>) -> CorpusStats {
        CorpusStats {
            male_total: 0,
            female_total: 0,
            cooc: CoocTable::default(),
            cooc_counting: COOC_COUNTING.to_string(),
            sentences_seen: 0,
            tokens_seen: 0,
            lexicon_hash: lexicon_hash.into(),
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }
}

/// Field-wise sum of two stats computed with the same lexicon.
pub fn merge(a: &CorpusStats, b: &CorpusStats) -> Result<CorpusStats, StatsError> {
    if a.lexicon_hash != b.lexicon_hash {
        return Err(StatsError::LexiconMismatch {
            left: a.lexicon_hash.clone(),
            right: b.lexicon_hash.clone(),
        });
    }
    Ok(CorpusStats {
        male_total: a.male_total + b.male_total,
        female_total: a.female_total + b.female_total,
        cooc: a.cooc.sum(&b.cooc),
        cooc_counting: COOC_COUNTING.to_string(),
        sentences_seen: a.sentences_seen + b.sentences_seen,
        tokens_seen: a.tokens_seen + b.tokens_seen,
        lexicon_hash: a.lexicon_hash.clone(),
    })
}

/// Splits a raw line into tokens.
///
/// Pre-tokenized input is split on whitespace verbatim. Otherwise leading and
/// trailing ASCII punctuation is stripped from each whitespace token and
/// tokens that become empty are dropped.
pub fn tokenize(line: &str, pretokenized: bool) -> Vec<&str> {
    if pretokenized {
        return line.split_whitespace().collect();
    }
    line.split_whitespace()
        .map(|t| t.trim_matches(|c: char| c.is_ascii_punctuation()))
        .filter(|t| !t.is_empty())
        .collect()
}

/// Per-sentence tallies, exposed for testing and for callers that need
/// sentence-level detail.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SentenceCounts {
    pub male_pronouns: u64,
    pub female_pronouns: u64,
    pub male_biased_occupations: u64,
    pub female_biased_occupations: u64,
    pub tokens: u64,
}

/// A lexicon compiled for fast matching.
#[derive(Debug, Clone)]
pub struct Scanner {
    pronouns: HashMap<String, Gender>,
    // first token -> candidate occupations, longest first
    occupations: HashMap<String, Vec<(Vec<String>, Stereotype)>>,
    lexicon_hash: String,
}

impl Scanner {
    pub fn new(lexicon: &GenderLexicon) -> Scanner {
        let mut pronouns = HashMap::new();
        for p in &lexicon.male_pronouns {
            pronouns.insert(p.clone(), Gender::Male);
        }
        for p in &lexicon.female_pronouns {
            pronouns.insert(p.clone(), Gender::Female);
        }
        let mut occupations: HashMap<String, Vec<(Vec<String>, Stereotype)>> = HashMap::new();
        for occ in &lexicon.occupations {
            occupations
                .entry(occ.surface[0].clone())
                .or_default()
                .push((occ.surface.clone(), occ.stereotype));
        }
        for candidates in occupations.values_mut() {
            candidates.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        }
        Scanner {
            pronouns,
            occupations,
            lexicon_hash: lexicon.content_hash(),
        }
    }

    pub fn lexicon_hash(&self) -> &str {
        &self.lexicon_hash
    }

    pub fn count_sentence<S: AsRef<str>>(&self, tokens: &[S]) -> SentenceCounts {
        let lowered: Vec<String> = tokens.iter().map(|t| t.as_ref().to_lowercase()).collect();
        let mut counts = SentenceCounts {
            tokens: lowered.len() as u64,
            ..SentenceCounts::default()
        };
        for tok in &lowered {
            match self.pronouns.get(tok) {
                Some(Gender::Male) => counts.male_pronouns += 1,
                Some(Gender::Female) => counts.female_pronouns += 1,
                None => {}
            }
        }
        let mut i = 0;
        while i < lowered.len() {
            let hit = self.occupations.get(&lowered[i]).and_then(|cands| {
                cands.iter().find(|(surface, _)| {
                    i + surface.len() <= lowered.len() && surface.iter().zip(&lowered[i..]).all(|(a, b)| a == b)
                })
            });
            match hit {
                Some((surface, stereotype)) => {
                    match stereotype {
                        Stereotype::MaleBiased => counts.male_biased_occupations += 1,
                        Stereotype::FemaleBiased => counts.female_biased_occupations += 1,
                    }
                    i += surface.len();
                }
                None => i += 1,
            }
        }
        counts
    }

    fn accumulate(&self, stats: &mut CorpusStats, c: SentenceCounts) {
        stats.sentences_seen += 1;
        stats.tokens_seen += c.tokens;
        stats.male_total += c.male_pronouns;
        stats.female_total += c.female_pronouns;
        for (g, pn) in [(Gender::Male, c.male_pronouns), (Gender::Female, c.female_pronouns)] {
            stats
                .cooc
                .add(g, Stereotype::MaleBiased, pn * c.male_biased_occupations);
            stats
                .cooc
                .add(g, Stereotype::FemaleBiased, pn * c.female_biased_occupations);
        }
    }

    /// Sequential scan over token sequences.
    pub fn scan<I, T, S>(&self, sentences: I) -> CorpusStats
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[S]>,
        S: AsRef<str>,
    {
        let mut stats = CorpusStats::zero(self.lexicon_hash.clone());
        for sentence in sentences {
            let c = self.count_sentence(sentence.as_ref());
            self.accumulate(&mut stats, c);
        }
        stats
    }

    /// Sharded scan over raw lines; each shard yields private stats which are
    /// merged. The result does not depend on `threads`.
    pub fn scan_lines<L: AsRef<str> + Sync>(&self, lines: &[L], pretokenized: bool, threads: usize) -> CorpusStats {
        let shards: Vec<&[L]> = lines.chunks(SHARD_LINES).collect();
        let partial = par::map(&shards, threads, |shard| {
            let mut stats = CorpusStats::zero(self.lexicon_hash.clone());
            for line in shard.iter() {
                let c = self.count_sentence(&tokenize(line.as_ref(), pretokenized));
                self.accumulate(&mut stats, c);
            }
            stats
        });
        partial
            .iter()
            .fold(CorpusStats::zero(self.lexicon_hash.clone()), |acc, s| {
                merge(&acc, s).expect("shards share a lexicon")
            })
    }

    /// Streams a corpus (one sentence per line) in bounded batches.
    pub fn scan_reader<R: BufRead>(
        &self,
        reader: R,
        pretokenized: bool,
        threads: usize,
    ) -> Result<CorpusStats, StatsError> {
        let mut total = CorpusStats::zero(self.lexicon_hash.clone());
        let mut batch: Vec<String> = Vec::with_capacity(READ_BATCH_LINES);
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            batch.push(line);
            if batch.len() == READ_BATCH_LINES {
                total = merge(&total, &self.scan_lines(&batch, pretokenized, threads))?;
                batch.clear();
            }
        }
        if !batch.is_empty() {
            total = merge(&total, &self.scan_lines(&batch, pretokenized, threads))?;
        }
        Ok(total)
    }
}

/// Convenience wrapper: compile `lexicon` and scan `sentences` sequentially.
pub fn scan<I, T, S>(sentences: I, lexicon: &GenderLexicon) -> CorpusStats
where
    I: IntoIterator<Item = T>,
    T: AsRef<[S]>,
    S: AsRef<str>,
{
    Scanner::new(lexicon).scan(sentences)
}
