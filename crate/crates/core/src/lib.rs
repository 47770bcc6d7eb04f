//! Measuring and mitigating gender bias in contextualized word embeddings.
//!
//! * [`corpus_stats`]: gendered pronoun counts and pronoun/occupation
//!   co-occurrence over a training corpus.
//! * [`genderswap`]: lexicon-driven gender swapping of sentences and
//!   coreference documents, and swap-based augmentation.
//! * [`embedding_store`]: binary per-token vector stores.
//! * [`subspace`]: PCA over original-minus-swapped vector differences.
//! * [`probe`]: an RBF nu-SVC that predicts gender from one vector.
//! * [`neutralize`]: averaging a sentence's vectors with its swapped twin.
//! * [`coref_eval`]: MUC, B-cubed, CEAF-e and CoNLL scoring of pro/anti
//!   stereotype pairs with a randomization test.
//!
//! Every data-parallel entry point takes a thread count; `1` runs the plain
//! sequential loop. Building without the `parallel` feature drops rayon.

pub mod coref_eval;
pub mod corpus_stats;
pub mod embedding_store;
pub mod genderswap;
pub mod io;
pub mod lexicon;
pub mod neutralize;
pub mod par;
pub mod probe;
pub mod subspace;

pub use coref_eval::CorefError;
pub use corpus_stats::StatsError;
pub use embedding_store::StoreError;
pub use genderswap::SwapError;
pub use lexicon::{Gender, GenderLexicon, LexiconError};
pub use neutralize::NeutralizeError;
pub use probe::ProbeError;
pub use subspace::SubspaceError;

/// Any error raised by this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Swap(#[from] SwapError),
    #[error(transparent)]
    Conll(#[from] genderswap::ConllError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Subspace(#[from] SubspaceError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Neutralize(#[from] NeutralizeError),
    #[error(transparent)]
    Coref(#[from] CorefError),
}

impl Error {
    /// Short machine-readable name of the error's origin.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Lexicon(_) => "lexicon",
            Error::Stats(_) => "corpus_stats",
            Error::Swap(_) => "genderswap",
            Error::Conll(_) => "conll",
            Error::Store(_) => "embedding_store",
            Error::Subspace(_) => "subspace",
            Error::Probe(_) => "probe",
            Error::Neutralize(_) => "neutralize",
            Error::Coref(_) => "coref_eval",
        }
    }
}

pub(crate) fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}
