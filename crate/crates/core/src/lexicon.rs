//! Gender lexicon: pronoun sets, stereotyped occupations and swap rules.
//!
//! The lexicon is plain data. The TSV layout has one record per line with
//! tab-separated fields:
//!
//! ```text
//! pronoun_m   he
//! pronoun_f   she
//! occ         construction worker   M
//! pair        father   mother
//! ambig       her      his,him      possessive_objective
//! ```
//!
//! Lines starting with `#` and blank lines are ignored. All tokens are
//! case-folded to lowercase on load.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// The lexicon shipped with the toolkit: WinoBias occupations, the pronoun
/// sets `{he, his, him}` / `{she, her}` and ~120 swap pairs.
pub const DEFAULT_LEXICON_TSV: &str = include_str!("../data/default_lexicon.tsv");

#[derive(Debug, thiserror::Error)]
pub enum LexiconError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid lexicon: {0}")]
    Validation(String),
    #[error("cannot read lexicon {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    #[serde(rename = "M")]
    Male,
    #[serde(rename = "F")]
    Female,
}

impl Gender {
    pub fn opposite(self) -> Gender {
        match self {
            Gender::Male => Gender::Female,
            Gender::Female => Gender::Male,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Gender::Male => "M",
            Gender::Female => "F",
        }
    }

    pub fn from_code(code: &str) -> Option<Gender> {
        match code {
            "M" | "m" => Some(Gender::Male),
            "F" | "f" => Some(Gender::Female),
            _ => None,
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stereotype {
    MaleBiased,
    FemaleBiased,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Occupation {
    /// Lowercase token sequence; multi-word occupations have several tokens.
    pub surface: Vec<String>,
    pub stereotype: Stereotype,
}

/// How an ambiguous source token picks between its two targets.
///
/// Both strategies take targets in the order `[determiner form, pronoun form]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AmbiguityStrategy {
    /// `her`: `PRP$` selects the first target, `PRP` the second; untagged
    /// tokens fall back to the next-token heuristic.
    PossessiveObjective,
    /// `his`: the first target unless the token is tagged `PRP` (standalone).
    PossessiveStandalone,
}

impl AmbiguityStrategy {
    pub fn tag(self) -> &'static str {
        match self {
            AmbiguityStrategy::PossessiveObjective => "possessive_objective",
            AmbiguityStrategy::PossessiveStandalone => "possessive_standalone",
        }
    }

    fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "possessive_objective" => Some(AmbiguityStrategy::PossessiveObjective),
            "possessive_standalone" => Some(AmbiguityStrategy::PossessiveStandalone),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AmbiguousRule {
    pub source: String,
    pub targets: [String; 2],
    pub strategy: AmbiguityStrategy,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenderLexicon {
    pub male_pronouns: BTreeSet<String>,
    pub female_pronouns: BTreeSet<String>,
    pub occupations: Vec<Occupation>,
    /// `(male form, female form)` in file order.
    pub swap_pairs: Vec<(String, String)>,
    pub ambiguous_rules: Vec<AmbiguousRule>,
}

impl GenderLexicon {
    /// The built-in lexicon.
    pub fn default_lexicon() -> GenderLexicon {
        GenderLexicon::parse(DEFAULT_LEXICON_TSV).expect("built-in lexicon is valid")
    }

    /// Loads and validates a TSV lexicon file.
    pub fn load(path: impl AsRef<Path>) -> Result<GenderLexicon, LexiconError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| LexiconError::Io {
            path: path.display().to_string(),
            source,
        })?;
        GenderLexicon::parse(&text)
    }

    pub fn parse(text: &str) -> Result<GenderLexicon, LexiconError> {
        let mut lex = GenderLexicon::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            let err = |message: String| LexiconError::Parse { line: line_no, message };
            let expect = |n: usize| -> Result<(), LexiconError> {
                if fields.len() != n {
                    return Err(err(format!(
                        "`{}` record needs {} fields, found {}",
                        fields[0],
                        n,
                        fields.len()
                    )));
                }
                if fields.iter().any(|f| f.is_empty()) {
                    return Err(err("empty field".to_string()));
                }
                Ok(())
            };
            match fields[0] {
                "pronoun_m" => {
                    expect(2)?;
                    lex.male_pronouns.insert(fields[1].to_lowercase());
                }
                "pronoun_f" => {
                    expect(2)?;
                    lex.female_pronouns.insert(fields[1].to_lowercase());
                }
                "occ" => {
                    expect(3)?;
                    let stereotype = match fields[2] {
                        "M" => Stereotype::MaleBiased,
                        "F" => Stereotype::FemaleBiased,
                        other => return Err(err(format!("stereotype must be M or F, got `{other}`"))),
                    };
                    let surface: Vec<String> = fields[1].split_whitespace().map(str::to_lowercase).collect();
                    lex.occupations.push(Occupation { surface, stereotype });
                }
                "pair" => {
                    expect(3)?;
                    lex.swap_pairs
                        .push((fields[1].to_lowercase(), fields[2].to_lowercase()));
                }
                "ambig" => {
                    expect(4)?;
                    let targets: Vec<String> = fields[2].split(',').map(|t| t.trim().to_lowercase()).collect();
                    if targets.len() != 2 || targets.iter().any(String::is_empty) {
                        return Err(err("ambiguous rule needs exactly two targets".into()));
                    }
                    let strategy = AmbiguityStrategy::from_tag(fields[3])
                        .ok_or_else(|| err(format!("unknown rule tag `{}`", fields[3])))?;
                    lex.ambiguous_rules.push(AmbiguousRule {
                        source: fields[1].to_lowercase(),
                        targets: [targets[0].clone(), targets[1].clone()],
                        strategy,
                    });
                }
                other => return Err(err(format!("unknown record kind `{other}`"))),
            }
        }
        lex.validate()?;
        Ok(lex)
    }

    pub fn validate(&self) -> Result<(), LexiconError> {
        let fail = |m: String| Err(LexiconError::Validation(m));
        if self.male_pronouns.is_empty() && self.female_pronouns.is_empty() {
            return fail("no pronouns defined".into());
        }
        if let Some(tok) = self.male_pronouns.intersection(&self.female_pronouns).next() {
            return fail(format!("`{tok}` is listed as both a male and a female pronoun"));
        }

        let mut labels: HashMap<&[String], Stereotype> = HashMap::new();
        for occ in &self.occupations {
            if labels.insert(&occ.surface, occ.stereotype).is_some() {
                return fail(format!("occupation `{}` listed twice", occ.surface.join(" ")));
            }
        }

        let mut sources = BTreeSet::new();
        for rule in &self.ambiguous_rules {
            if !sources.insert(rule.source.as_str()) {
                return fail(format!("two ambiguous rules for `{}`", rule.source));
            }
        }

        // Unambiguous entries must form a bijection.
        let mut male_col: HashMap<&str, &str> = HashMap::new();
        let mut female_col: HashMap<&str, &str> = HashMap::new();
        for (m, f) in &self.swap_pairs {
            if m == f {
                return fail(format!("pair `{m}` maps to itself"));
            }
            if let Some(prev) = male_col.get(m.as_str()) {
                if !sources.contains(m.as_str()) {
                    return fail(format!(
                        "`{m}` appears twice in the male column (`{prev}`, `{f}`) without an ambiguous rule"
                    ));
                }
            }
            if let Some(prev) = female_col.get(f.as_str()) {
                if !sources.contains(f.as_str()) {
                    return fail(format!(
                        "`{f}` appears twice in the female column (`{prev}`, `{m}`) without an ambiguous rule"
                    ));
                }
            }
            male_col.insert(m, f);
            female_col.insert(f, m);
        }
        for m in male_col.keys() {
            if female_col.contains_key(m) && !sources.contains(m) {
                return fail(format!("`{m}` appears in both pair columns"));
            }
        }
        Ok(())
    }

    pub fn pronoun_gender(&self, lowercase_token: &str) -> Option<Gender> {
        if self.male_pronouns.contains(lowercase_token) {
            Some(Gender::Male)
        } else if self.female_pronouns.contains(lowercase_token) {
            Some(Gender::Female)
        } else {
            None
        }
    }

    /// Gender of any gendered word: pronouns first, then either side of a
    /// swap pair.
    pub fn word_gender(&self, lowercase_token: &str) -> Option<Gender> {
        self.pronoun_gender(lowercase_token).or_else(|| {
            self.swap_pairs.iter().find_map(|(m, f)| {
                if m == lowercase_token {
                    Some(Gender::Male)
                } else if f == lowercase_token {
                    Some(Gender::Female)
                } else {
                    None
                }
            })
        })
    }

    pub fn is_ambiguous(&self, lowercase_token: &str) -> bool {
        self.ambiguous_rules.iter().any(|r| r.source == lowercase_token)
    }

    /// Swap pairs in which neither side is the source of an ambiguous rule.
    pub fn unambiguous_pairs(&self) -> Vec<(String, String)> {
        self.swap_pairs
            .iter()
            .filter(|(m, f)| !self.is_ambiguous(m) && !self.is_ambiguous(f))
            .cloned()
            .collect()
    }

    /// Hex SHA-256 over a canonical rendering of every record.
    pub fn content_hash(&self) -> String {
        let mut canon = String::new();
        for p in &self.male_pronouns {
            canon.push_str(&format!("pronoun_m\t{p}\n"));
        }
        for p in &self.female_pronouns {
            canon.push_str(&format!("pronoun_f\t{p}\n"));
        }
        let mut occs: Vec<String> = self
            .occupations
            .iter()
            .map(|o| {
                let tag = match o.stereotype {
                    Stereotype::MaleBiased => "M",
                    Stereotype::FemaleBiased => "F",
                };
                format!("occ\t{}\t{}\n", o.surface.join(" "), tag)
            })
            .collect();
        occs.sort();
        let mut pairs: Vec<String> = self
            .swap_pairs
            .iter()
            .map(|(m, f)| format!("pair\t{m}\t{f}\n"))
            .collect();
        pairs.sort();
        let mut rules: Vec<String> = self
            .ambiguous_rules
            .iter()
            .map(|r| {
                format!(
                    "ambig\t{}\t{},{}\t{}\n",
                    r.source,
                    r.targets[0],
                    r.targets[1],
                    r.strategy.tag()
                )
            })
            .collect();
        rules.sort();
        for chunk in occs.iter().chain(&pairs).chain(&rules) {
            canon.push_str(chunk);
        }
        let digest = Sha256::digest(canon.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
