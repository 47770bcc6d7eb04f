//! Token-level gender swapping for sentences and coreference documents, and
//! union augmentation (originals followed by their swapped copies).
//!
//! Every swap replaces one token with one token, so token indices, spans and
//! per-token annotations survive untouched. The capitalization class of the
//! original token (`he`, `He`, `HE`) is re-applied to the replacement.

pub mod conll;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::lexicon::{AmbiguityStrategy, AmbiguousRule, GenderLexicon};
use crate::par;

pub use conll::{read_conll, write_conll, ConllError, ConllRows};

#[derive(Debug, thiserror::Error)]
pub enum SwapError {
    #[error("cannot swap an empty sentence")]
    EmptySentence,
    #[error("POS sequence has {pos} tags for {tokens} tokens")]
    PosLengthMismatch { tokens: usize, pos: usize },
    #[error("document {doc_id}: {message}")]
    InvalidDocument { doc_id: String, message: String },
}

/// Which rule produced a replacement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum SwapRule {
    /// Unambiguous swap pair.
    Pair,
    /// Ambiguous token resolved by its POS tag.
    PosTag(String),
    /// Ambiguous `her`-style token resolved by the next-token heuristic.
    Heuristic,
    /// Ambiguous token with no deciding evidence; first target used.
    Default,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapRecord {
    pub position: usize,
    pub original: String,
    pub replacement: String,
    pub rule: SwapRule,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapResult {
    pub tokens: Vec<String>,
    pub swapped_positions: Vec<usize>,
    pub direction_map: Vec<SwapRecord>,
}

/// Capitalization class of a token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CasePattern {
    Lower,
    /// First letter upper, the rest lower (`He`, `Mr.`).
    Initial,
    /// All letters upper, at least two letters (`HE`).
    Upper,
    Mixed,
}

impl CasePattern {
    pub fn of(token: &str) -> CasePattern {
        let letters: Vec<char> = token.chars().filter(|c| c.is_alphabetic()).collect();
        if letters.iter().all(|c| !c.is_uppercase()) {
            return CasePattern::Lower;
        }
        let first_upper = letters[0].is_uppercase();
        let rest_lower = letters[1..].iter().all(|c| !c.is_uppercase());
        if first_upper && rest_lower {
            CasePattern::Initial
        } else if letters.iter().all(|c| !c.is_lowercase()) {
            CasePattern::Upper
        } else {
            CasePattern::Mixed
        }
    }

    /// Applies the pattern to a lowercase word. Mixed-case originals get the
    /// lowercase replacement.
    pub fn apply(self, lowercase: &str) -> String {
        match self {
            CasePattern::Lower | CasePattern::Mixed => lowercase.to_string(),
            CasePattern::Upper => lowercase.to_uppercase(),
            CasePattern::Initial => {
                let mut out = String::with_capacity(lowercase.len());
                let mut done = false;
                for c in lowercase.chars() {
                    if !done && c.is_alphabetic() {
                        out.extend(c.to_uppercase());
                        done = true;
                    } else {
                        out.push(c);
                    }
                }
                out
            }
        }
    }
}

// Words after which a `her` reads as an object pronoun rather than a
// possessive determiner: auxiliaries plus closed-class function words.
const NON_POSSESSED: &[&str] = &[
    "is",
    "was",
    "are",
    "were",
    "be",
    "been",
    "being",
    "am",
    "has",
    "have",
    "had",
    "do",
    "does",
    "did",
    "will",
    "would",
    "shall",
    "should",
    "can",
    "could",
    "may",
    "might",
    "must",
    "to",
    "and",
    "or",
    "but",
    "nor",
    "that",
    "the",
    "a",
    "an",
    "in",
    "on",
    "at",
    "for",
    "with",
    "from",
    "about",
    "as",
    "by",
    "of",
    "into",
    "onto",
    "up",
    "out",
    "off",
    "back",
    "down",
    "over",
    "again",
    "too",
    "so",
    "because",
    "if",
    "when",
    "while",
    "then",
    "this",
    "these",
    "those",
    "there",
    "here",
    "not",
    "yet",
    "since",
    "until",
    "after",
    "before",
    "than",
    "who",
    "whom",
    "which",
    "what",
    "how",
    "why",
    "where",
    "he",
    "she",
    "it",
    "they",
    "we",
    "you",
    "i",
    "him",
    "her",
    "his",
    "them",
    "us",
    "me",
    "himself",
    "herself",
    "away",
    "home",
    "today",
    "tomorrow",
    "yesterday",
    "now",
    "once",
    "twice",
    "very",
    "well",
    "all",
    "both",
    "either",
    "neither",
];

fn reads_as_possessive(next: Option<&str>) -> bool {
    let Some(next) = next else { return false };
    let starts_alpha = next.chars().next().is_some_and(char::is_alphabetic);
    let word_like = next.chars().all(|c| c.is_alphabetic() || c == '-' || c == '\'');
    starts_alpha && word_like && !NON_POSSESSED.contains(&next.to_lowercase().as_str())
}

/// A lexicon compiled into lookup tables for swapping.
#[derive(Debug, Clone)]
pub struct GenderSwapper {
    direct: HashMap<String, String>,
    ambiguous: HashMap<String, AmbiguousRule>,
}

impl GenderSwapper {
    pub fn new(lexicon: &GenderLexicon) -> GenderSwapper {
        let ambiguous: HashMap<String, AmbiguousRule> = lexicon
            .ambiguous_rules
            .iter()
            .map(|r| (r.source.clone(), r.clone()))
            .collect();
        let mut direct = HashMap::new();
        for (m, f) in &lexicon.swap_pairs {
            if !ambiguous.contains_key(m) {
                direct.entry(m.clone()).or_insert_with(|| f.clone());
            }
            if !ambiguous.contains_key(f) {
                direct.entry(f.clone()).or_insert_with(|| m.clone());
            }
        }
        GenderSwapper { direct, ambiguous }
    }

    fn resolve(&self, lower: &str, pos_tag: Option<&str>, next: Option<&str>) -> Option<(String, SwapRule)> {
        if let Some(target) = self.direct.get(lower) {
            return Some((target.clone(), SwapRule::Pair));
        }
        let rule = self.ambiguous.get(lower)?;
        let [determiner, pronoun] = &rule.targets;
        let picked = match (rule.strategy, pos_tag) {
            (AmbiguityStrategy::PossessiveObjective, Some(tag @ "PRP$")) => {
                (determiner.clone(), SwapRule::PosTag(tag.to_string()))
            }
            (AmbiguityStrategy::PossessiveObjective, Some(tag @ "PRP")) => {
                (pronoun.clone(), SwapRule::PosTag(tag.to_string()))
            }
            (AmbiguityStrategy::PossessiveObjective, _) => {
                if reads_as_possessive(next) {
                    (determiner.clone(), SwapRule::Heuristic)
                } else {
                    (pronoun.clone(), SwapRule::Heuristic)
                }
            }
            (AmbiguityStrategy::PossessiveStandalone, Some(tag @ "PRP")) => {
                (pronoun.clone(), SwapRule::PosTag(tag.to_string()))
            }
            (AmbiguityStrategy::PossessiveStandalone, Some(tag)) => {
                (determiner.clone(), SwapRule::PosTag(tag.to_string()))
            }
            (AmbiguityStrategy::PossessiveStandalone, None) => (determiner.clone(), SwapRule::Default),
        };
        Some(picked)
    }

    /// Swaps every gendered token of one sentence.
    pub fn swap_sentence<S: AsRef<str>, P: AsRef<str>>(
        &self,
        tokens: &[S],
        pos: Option<&[P]>,
    ) -> Result<SwapResult, SwapError> {
        if tokens.is_empty() {
            return Err(SwapError::EmptySentence);
        }
        if let Some(pos) = pos {
            if pos.len() != tokens.len() {
                return Err(SwapError::PosLengthMismatch {
                    tokens: tokens.len(),
                    pos: pos.len(),
                });
            }
        }
        let mut out = Vec::with_capacity(tokens.len());
        let mut swapped_positions = Vec::new();
        let mut direction_map = Vec::new();
        for (i, tok) in tokens.iter().enumerate() {
            let tok = tok.as_ref();
            let lower = tok.to_lowercase();
            let tag = pos.map(|p| p[i].as_ref());
            let next = tokens.get(i + 1).map(|t| t.as_ref());
            match self.resolve(&lower, tag, next) {
                Some((target, rule)) => {
                    let replacement = CasePattern::of(tok).apply(&target);
                    swapped_positions.push(i);
                    direction_map.push(SwapRecord {
                        position: i,
                        original: tok.to_string(),
                        replacement: replacement.clone(),
                        rule,
                    });
                    out.push(replacement);
                }
                None => out.push(tok.to_string()),
            }
        }
        Ok(SwapResult {
            tokens: out,
            swapped_positions,
            direction_map,
        })
    }

    /// Swaps a whitespace-tokenized line, preserving blank lines.
    pub fn swap_line(&self, line: &str) -> String {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            return String::new();
        }
        self.swap_sentence::<_, &str>(&tokens, None)
            .map(|r| r.tokens.join(" "))
            .unwrap_or_default()
    }
}

/// Convenience wrapper compiling `lexicon` for a single sentence.
pub fn swap_sentence<S: AsRef<str>, P: AsRef<str>>(
    tokens: &[S],
    lexicon: &GenderLexicon,
    pos: Option<&[P]>,
) -> Result<SwapResult, SwapError> {
    GenderSwapper::new(lexicon).swap_sentence(tokens, pos)
}

/// One mention of a coreference cluster; token indices are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CorefSpan {
    pub cluster: u64,
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorefDocument {
    pub doc_id: String,
    pub sentences: Vec<Vec<String>>,
    pub pos: Option<Vec<Vec<String>>>,
    /// BIO tags (`B-PERSON`, `I-PERSON`, `O`).
    pub ner: Option<Vec<Vec<String>>>,
    pub coref_spans: Vec<CorefSpan>,
    /// Source rows when the document was read from a CoNLL file; used to write
    /// the document back with only the word column changed.
    pub conll: Option<ConllRows>,
}

impl CorefDocument {
    pub fn new(doc_id: impl Into<String>, sentences: Vec<Vec<String>>) -> CorefDocument {
        CorefDocument {
            doc_id: doc_id.into(),
            sentences,
            pos: None,
            ner: None,
            coref_spans: Vec::new(),
            conll: None,
        }
    }

    pub fn validate(&self) -> Result<(), SwapError> {
        let bad = |message: String| SwapError::InvalidDocument {
            doc_id: self.doc_id.clone(),
            message,
        };
        for (name, layer) in [("POS", &self.pos), ("NER", &self.ner)] {
            if let Some(layer) = layer {
                if layer.len() != self.sentences.len()
                    || layer.iter().zip(&self.sentences).any(|(a, b)| a.len() != b.len())
                {
                    return Err(bad(format!("{name} layer does not match token layout")));
                }
            }
        }
        let mut seen: HashMap<(usize, usize, usize), u64> = HashMap::new();
        for span in &self.coref_spans {
            let Some(sentence) = self.sentences.get(span.sentence) else {
                return Err(bad(format!("span in missing sentence {}", span.sentence)));
            };
            if span.start > span.end || span.end >= sentence.len() {
                return Err(bad(format!(
                    "span ({}, {}) outside sentence {} of length {}",
                    span.start,
                    span.end,
                    span.sentence,
                    sentence.len()
                )));
            }
            if let Some(other) = seen.insert((span.sentence, span.start, span.end), span.cluster) {
                return Err(bad(format!(
                    "mention ({}, {}, {}) appears in clusters {} and {}",
                    span.sentence, span.start, span.end, other, span.cluster
                )));
            }
        }
        Ok(())
    }

    /// Token-level PERSON spans `(sentence, start, end)` from the BIO layer.
    pub fn person_spans(&self) -> Vec<(usize, usize, usize)> {
        let Some(ner) = &self.ner else { return Vec::new() };
        let mut spans = Vec::new();
        for (s, tags) in ner.iter().enumerate() {
            let mut open: Option<usize> = None;
            for (i, tag) in tags.iter().enumerate() {
                let continues = tag == "I-PERSON" && open.is_some();
                if !continues {
                    if let Some(start) = open.take() {
                        spans.push((s, start, i - 1));
                    }
                    if tag == "B-PERSON" || tag == "I-PERSON" {
                        open = Some(i);
                    }
                }
            }
            if let Some(start) = open {
                spans.push((s, start, tags.len() - 1));
            }
        }
        spans
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AugmentOptions {
    /// Replace PERSON-tagged tokens with `E1`, `E2`, ... (stable per surface
    /// string within a document).
    pub anonymize: bool,
}

/// Swaps the word tokens of a document; spans, tags and structure are kept.
pub fn swap_coref_document(
    doc: &CorefDocument,
    swapper: &GenderSwapper,
    options: AugmentOptions,
) -> Result<CorefDocument, SwapError> {
    doc.validate()?;
    let mut sentences = Vec::with_capacity(doc.sentences.len());
    for (s, tokens) in doc.sentences.iter().enumerate() {
        let pos = doc.pos.as_ref().map(|p| p[s].as_slice());
        sentences.push(swapper.swap_sentence(tokens, pos)?.tokens);
    }
    if options.anonymize {
        let mut placeholders: HashMap<String, String> = HashMap::new();
        for (s, start, end) in doc.person_spans() {
            let surface = doc.sentences[s][start..=end].join(" ");
            let next_id = placeholders.len() + 1;
            let placeholder = placeholders
                .entry(surface)
                .or_insert_with(|| format!("E{next_id}"))
                .clone();
            for tok in &mut sentences[s][start..=end] {
                *tok = placeholder.clone();
            }
        }
    }
    Ok(CorefDocument {
        sentences,
        ..doc.clone()
    })
}

/// Suffix appended to the id of every swapped companion document.
pub const SWAPPED_SUFFIX: &str = "_swapped";

/// Originals followed by their swapped variants (in the same order).
pub fn augment_corpus(
    docs: &[CorefDocument],
    swapper: &GenderSwapper,
    options: AugmentOptions,
    threads: usize,
) -> Result<Vec<CorefDocument>, SwapError> {
    let swapped = par::map(docs, threads, |doc| {
        swap_coref_document(doc, swapper, options).map(|mut d| {
            d.doc_id = format!("{}{}", doc.doc_id, SWAPPED_SUFFIX);
            d
        })
    });
    let mut out = docs.to_vec();
    for doc in swapped {
        out.push(doc?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn swapper() -> GenderSwapper {
        GenderSwapper::new(&GenderLexicon::default_lexicon())
    }

    fn strs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn swaps_and_preserves_case() {
        let r = swapper()
            .swap_sentence::<_, &str>(&["He", "likes", "his", "dog"], None)
            .unwrap();
        assert_eq!(r.tokens, strs(&["She", "likes", "her", "dog"]));
        assert_eq!(r.swapped_positions, vec![0, 2]);
        assert_eq!(r.direction_map[0].rule, SwapRule::Pair);
    }

    #[test]
    fn sentence_final_her_is_objective() {
        let r = swapper()
            .swap_sentence::<_, &str>(&["I", "saw", "her", "."], None)
            .unwrap();
        assert_eq!(r.tokens, strs(&["I", "saw", "him", "."]));
        assert_eq!(r.direction_map[0].rule, SwapRule::Heuristic);
    }

    #[test]
    fn her_before_noun_is_possessive() {
        let r = swapper()
            .swap_sentence::<_, &str>(&["she", "fixed", "her", "car"], None)
            .unwrap();
        assert_eq!(r.tokens, strs(&["he", "fixed", "his", "car"]));
        let r = swapper()
            .swap_sentence::<_, &str>(&["told", "her", "to", "go"], None)
            .unwrap();
        assert_eq!(r.tokens[1], "him");
    }

    #[test]
    fn pos_tag_decides_her() {
        let r = swapper()
            .swap_sentence(&["her", "car"], Some(&["PRP$", "NN"][..]))
            .unwrap();
        assert_eq!(r.tokens, strs(&["his", "car"]));
        let r = swapper()
            .swap_sentence(&["saw", "her", "car"], Some(&["VBD", "PRP", "NN"][..]))
            .unwrap();
        assert_eq!(r.tokens[1], "him");
        assert_eq!(r.direction_map[0].rule, SwapRule::PosTag("PRP".into()));
    }

    #[test]
    fn his_goes_to_hers_only_when_standalone() {
        let s = swapper();
        let r = s
            .swap_sentence(&["it", "is", "his"], Some(&["PRP", "VBZ", "PRP"][..]))
            .unwrap();
        assert_eq!(r.tokens[2], "hers");
        let r = s.swap_sentence::<_, &str>(&["it", "is", "his"], None).unwrap();
        assert_eq!(r.tokens[2], "her");
        let r = s.swap_sentence::<_, &str>(&["it", "is", "hers"], None).unwrap();
        assert_eq!(r.tokens[2], "his");
    }

    #[test]
    fn pos_length_mismatch_is_an_error() {
        let err = swapper()
            .swap_sentence(&["he", "runs"], Some(&["PRP"][..]))
            .unwrap_err();
        assert!(matches!(err, SwapError::PosLengthMismatch { tokens: 2, pos: 1 }));
        assert!(matches!(
            swapper().swap_sentence::<&str, &str>(&[], None),
            Err(SwapError::EmptySentence)
        ));
    }

    #[test]
    fn case_patterns() {
        assert_eq!(CasePattern::of("he"), CasePattern::Lower);
        assert_eq!(CasePattern::of("He"), CasePattern::Initial);
        assert_eq!(CasePattern::of("Mr."), CasePattern::Initial);
        assert_eq!(CasePattern::of("HE"), CasePattern::Upper);
        assert_eq!(CasePattern::of("hE"), CasePattern::Mixed);
        assert_eq!(CasePattern::Upper.apply("mrs."), "MRS.");
        assert_eq!(CasePattern::Initial.apply("she's"), "She's");
    }

    #[test]
    fn document_swap_with_anonymization() {
        let mut doc = CorefDocument::new("d1", vec![strs(&["Mary", "said", "she", "left"])]);
        doc.ner = Some(vec![strs(&["B-PERSON", "O", "O", "O"])]);
        doc.coref_spans = vec![
            CorefSpan {
                cluster: 0,
                sentence: 0,
                start: 0,
                end: 0,
            },
            CorefSpan {
                cluster: 0,
                sentence: 0,
                start: 2,
                end: 2,
            },
        ];
        let out = swap_coref_document(&doc, &swapper(), AugmentOptions { anonymize: true }).unwrap();
        assert_eq!(out.sentences[0], strs(&["E1", "said", "he", "left"]));
        assert_eq!(out.coref_spans, doc.coref_spans);
        assert_eq!(out.ner, doc.ner);
    }

    #[test]
    fn placeholders_are_stable_per_surface() {
        let mut doc = CorefDocument::new(
            "d",
            vec![
                strs(&["John", "Smith", "met", "Ann", "."]),
                strs(&["John", "Smith", "left"]),
            ],
        );
        doc.ner = Some(vec![
            strs(&["B-PERSON", "I-PERSON", "O", "B-PERSON", "O"]),
            strs(&["B-PERSON", "I-PERSON", "O"]),
        ]);
        let out = swap_coref_document(&doc, &swapper(), AugmentOptions { anonymize: true }).unwrap();
        assert_eq!(out.sentences[0], strs(&["E1", "E1", "met", "E2", "."]));
        assert_eq!(out.sentences[1], strs(&["E1", "E1", "left"]));
    }

    #[test]
    fn ungendered_document_is_a_fixed_point() {
        let doc = CorefDocument::new("d", vec![strs(&["the", "cat", "sat"])]);
        let out = swap_coref_document(&doc, &swapper(), AugmentOptions::default()).unwrap();
        assert_eq!(out, doc);
    }

    #[test]
    fn invalid_span_is_rejected_before_rewriting() {
        let mut doc = CorefDocument::new("d", vec![strs(&["he", "left"])]);
        doc.coref_spans = vec![CorefSpan {
            cluster: 1,
            sentence: 0,
            start: 1,
            end: 2,
        }];
        assert!(matches!(
            swap_coref_document(&doc, &swapper(), AugmentOptions::default()),
            Err(SwapError::InvalidDocument { .. })
        ));
        doc.coref_spans = vec![
            CorefSpan {
                cluster: 1,
                sentence: 0,
                start: 0,
                end: 0,
            },
            CorefSpan {
                cluster: 2,
                sentence: 0,
                start: 0,
                end: 0,
            },
        ];
        assert!(doc.validate().is_err());
    }

    #[test]
    fn augmentation_doubles_and_renames() {
        let docs: Vec<CorefDocument> = ["bn0001", "bn0002", "bn0003"]
            .iter()
            .map(|id| CorefDocument::new(*id, vec![strs(&["he", "said", "hello"])]))
            .collect();
        let out = augment_corpus(&docs, &swapper(), AugmentOptions::default(), 2).unwrap();
        assert_eq!(out.len(), 6);
        assert_eq!(&out[..3], &docs[..]);
        assert_eq!(out[3].doc_id, "bn0001_swapped");
        assert_eq!(out[3].sentences[0][0], "she");
    }
}
