//! Test-time neutralization: average each token's vector with the aligned
//! vector from the gender-swapped sentence.

use std::collections::HashSet;
use std::path::Path;

use ndarray::{Array2, Zip};

use crate::embedding_store::{align_pair, AlignedPair, EmbeddingStore, StoreError, StoreManifest, StoreWriter};
use crate::par;

/// Recorded in output manifests under `averaging`.
pub const AVERAGING_MODE: &str = "exported-layer averaging";
/// Sentences aligned and averaged per parallel batch.
const BATCH: usize = 256;

#[derive(Debug, thiserror::Error)]
pub enum NeutralizeError {
    #[error("sentence `{0}` contains NaN or infinite values")]
    NonFinite(String),
    #[error("stores hold different sentence ids; only in a: {only_a:?}; only in b: {only_b:?}")]
    IdMismatch { only_a: Vec<String>, only_b: Vec<String> },
    #[error("sentence `{id}`: {source}")]
    Sentence {
        id: String,
        #[source]
        source: StoreError,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeutralizedSentence {
    pub sentence_id: String,
    pub tokens: Vec<String>,
    pub vectors: Array2<f32>,
}

/// Coordinate-wise mean of the two variants. The mean is taken in `f64` and
/// rounded once, so it is exact whenever the half-sum is representable.
pub fn neutralize_pair(pair: &AlignedPair) -> Result<NeutralizedSentence, NeutralizeError> {
    let finite = |m: &Array2<f32>| m.iter().all(|v| v.is_finite());
    if !finite(&pair.vectors_a) || !finite(&pair.vectors_b) {
        return Err(NeutralizeError::NonFinite(pair.sentence_id.clone()));
    }
    let vectors = Zip::from(&pair.vectors_a)
        .and(&pair.vectors_b)
        .map_collect(|&a, &b| ((a as f64 + b as f64) * 0.5) as f32);
    if !finite(&vectors) {
        return Err(NeutralizeError::NonFinite(pair.sentence_id.clone()));
    }
    Ok(NeutralizedSentence {
        sentence_id: pair.sentence_id.clone(),
        tokens: pair.tokens_a.clone(),
        vectors,
    })
}

/// Writes a store of neutralized sentences in `a`'s order. Both source layer
/// names are recorded in the output manifest.
pub fn neutralize_store(
    a: &EmbeddingStore,
    b: &EmbeddingStore,
    out: impl AsRef<Path>,
    threads: usize,
) -> Result<StoreManifest, NeutralizeError> {
    if a.dim() != b.dim() {
        return Err(StoreError::DimMismatch { a: a.dim(), b: b.dim() }.into());
    }
    let ids_a: HashSet<&str> = a.ids().collect();
    let ids_b: HashSet<&str> = b.ids().collect();
    if ids_a != ids_b {
        let only_a = a.ids().filter(|id| !ids_b.contains(id)).map(String::from).collect();
        let only_b = b.ids().filter(|id| !ids_a.contains(id)).map(String::from).collect();
        return Err(NeutralizeError::IdMismatch { only_a, only_b });
    }

    let layer = if a.layer() == b.layer() {
        a.layer().to_string()
    } else {
        format!("mean({},{})", a.layer(), b.layer())
    };
    let mut writer = StoreWriter::create(out, a.dim(), &layer)?;
    writer.set_metadata("source_layers", serde_json::json!([a.layer(), b.layer()]));
    writer.set_metadata("averaging", serde_json::json!(AVERAGING_MODE));

    let ids: Vec<&str> = a.ids().collect();
    for chunk in ids.chunks(BATCH) {
        let done = par::map(chunk, threads, |id| {
            let pair = align_pair(a, b, id).map_err(|source| NeutralizeError::Sentence {
                id: id.to_string(),
                source,
            })?;
            neutralize_pair(&pair)
        });
        for sentence in done {
            let s = sentence?;
            writer.append(&s.sentence_id, &s.tokens, s.vectors.view())?;
        }
    }
    Ok(writer.finish()?)
}
