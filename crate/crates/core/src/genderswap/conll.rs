//! CoNLL-2012-style document reader and writer.
//!
//! Two row layouts are accepted:
//!
//! * six columns: `doc_id token_index word pos ner coref`
//! * full CoNLL-2012 rows (12 or more columns): word in column 3, POS in
//!   column 4, NER in column 10 and coreference in the last column.
//!
//! Documents are delimited by `#begin document` / `#end document` and
//! sentences by blank lines. NER cells may use the bracketed style
//! (`(PERSON*`, `*`, `*)`) or BIO tags; both are normalised to BIO in memory.
//! Documents that were read from a file are written back row-for-row with
//! only the word column (and the document id) changed.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::{CorefDocument, CorefSpan};

#[derive(Debug, thiserror::Error)]
pub enum ConllError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Raw rows of a document as read from disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConllRows {
    pub begin_line: String,
    pub original_id: String,
    pub word_column: usize,
    /// `rows[sentence][token]` = all columns of that token line.
    pub rows: Vec<Vec<Vec<String>>>,
}

fn doc_id_from_header(header: &str) -> String {
    let rest = header.trim_start_matches("#begin document").trim();
    if let (Some(open), Some(close)) = (rest.find('('), rest.find(')')) {
        if open < close {
            return rest[open + 1..close].to_string();
        }
    }
    rest.split(|c: char| c == ';' || c.is_whitespace())
        .next()
        .unwrap_or("")
        .to_string()
}

struct Layout {
    word: usize,
    pos: usize,
    ner: usize,
}

fn layout_for(ncols: usize) -> Option<Layout> {
    match ncols {
        6 => Some(Layout {
            word: 2,
            pos: 3,
            ner: 4,
        }),
        n if n >= 12 => Some(Layout {
            word: 3,
            pos: 4,
            ner: 10,
        }),
        _ => None,
    }
}

fn bracket_ner_to_bio(cells: &[String], line: usize) -> Result<Vec<String>, ConllError> {
    let mut out = Vec::with_capacity(cells.len());
    let mut open: Option<String> = None;
    for cell in cells {
        let cell = cell.as_str();
        if let Some(rest) = cell.strip_prefix('(') {
            let label = rest.trim_end_matches(')').trim_end_matches('*').to_string();
            out.push(format!("B-{label}"));
            if !cell.ends_with(')') {
                open = Some(label);
            }
        } else if cell == "*" || cell == "-" {
            match &open {
                Some(label) => out.push(format!("I-{label}")),
                None => out.push("O".to_string()),
            }
        } else if cell == "*)" {
            match open.take() {
                Some(label) => out.push(format!("I-{label}")),
                None => {
                    return Err(ConllError::Parse {
                        line,
                        message: "NER span closed without being opened".into(),
                    })
                }
            }
        } else {
            return Err(ConllError::Parse {
                line,
                message: format!("unrecognised NER cell `{cell}`"),
            });
        }
    }
    Ok(out)
}

fn bio_to_brackets(tags: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(tags.len());
    for (i, tag) in tags.iter().enumerate() {
        let label = tag.strip_prefix("B-").or_else(|| tag.strip_prefix("I-")).unwrap_or("");
        let begins = !label.is_empty() && (tag.starts_with("B-") || i == 0 || !tags[i - 1].ends_with(label));
        let next_continues = tags
            .get(i + 1)
            .is_some_and(|n| !label.is_empty() && *n == format!("I-{label}"));
        let cell = match (label.is_empty(), begins, next_continues) {
            (true, _, _) => "*".to_string(),
            (false, true, true) => format!("({label}*"),
            (false, true, false) => format!("({label})"),
            (false, false, true) => "*".to_string(),
            (false, false, false) => "*)".to_string(),
        };
        out.push(cell);
    }
    out
}

fn parse_coref_cell(
    cell: &str,
    sentence: usize,
    token: usize,
    open: &mut HashMap<u64, Vec<usize>>,
    spans: &mut Vec<CorefSpan>,
    line: usize,
) -> Result<(), ConllError> {
    if cell == "-" || cell == "_" {
        return Ok(());
    }
    let err = |message: String| ConllError::Parse { line, message };
    for part in cell.split('|') {
        let starts = part.starts_with('(');
        let ends = part.ends_with(')');
        let id_text = part.trim_start_matches('(').trim_end_matches(')');
        let cluster: u64 = id_text
            .parse()
            .map_err(|_| err(format!("bad coreference cell `{cell}`")))?;
        match (starts, ends) {
            (true, true) => spans.push(CorefSpan {
                cluster,
                sentence,
                start: token,
                end: token,
            }),
            (true, false) => open.entry(cluster).or_default().push(token),
            (false, true) => {
                let start = open
                    .get_mut(&cluster)
                    .and_then(Vec::pop)
                    .ok_or_else(|| err(format!("cluster {cluster} closed before opening")))?;
                spans.push(CorefSpan {
                    cluster,
                    sentence,
                    start,
                    end: token,
                });
            }
            (false, false) => return Err(err(format!("bad coreference cell `{cell}`"))),
        }
    }
    Ok(())
}

struct Builder {
    begin_line: String,
    doc_id: String,
    layout: Option<Layout>,
    rows: Vec<Vec<Vec<String>>>,
    current: Vec<Vec<String>>,
}

impl Builder {
    fn flush_sentence(&mut self) {
        if !self.current.is_empty() {
            self.rows.push(std::mem::take(&mut self.current));
        }
    }

    fn finish(mut self, end_line: usize) -> Result<CorefDocument, ConllError> {
        self.flush_sentence();
        let layout = self.layout.unwrap_or(Layout {
            word: 2,
            pos: 3,
            ner: 4,
        });
        let mut sentences = Vec::new();
        let mut pos = Vec::new();
        let mut ner_cells = Vec::new();
        let mut spans = Vec::new();
        for (s, rows) in self.rows.iter().enumerate() {
            let mut open: HashMap<u64, Vec<usize>> = HashMap::new();
            sentences.push(rows.iter().map(|r| r[layout.word].clone()).collect::<Vec<_>>());
            pos.push(rows.iter().map(|r| r[layout.pos].clone()).collect::<Vec<_>>());
            ner_cells.push(rows.iter().map(|r| r[layout.ner].clone()).collect::<Vec<_>>());
            for (t, r) in rows.iter().enumerate() {
                let coref = r.last().expect("non-empty row");
                parse_coref_cell(coref, s, t, &mut open, &mut spans, end_line)?;
            }
            if let Some((cluster, _)) = open.iter().find(|(_, v)| !v.is_empty()) {
                return Err(ConllError::Parse {
                    line: end_line,
                    message: format!("cluster {cluster} left open at sentence end"),
                });
            }
        }
        let has_pos = pos.iter().flatten().any(|p| p != "-" && p != "_");
        let bracketed = ner_cells
            .iter()
            .flatten()
            .any(|c| c.starts_with('(') || c.starts_with('*'));
        let ner = if bracketed {
            let mut out = Vec::new();
            for cells in &ner_cells {
                out.push(bracket_ner_to_bio(cells, end_line)?);
            }
            Some(out)
        } else if ner_cells
            .iter()
            .flatten()
            .any(|c| c.starts_with("B-") || c.starts_with("I-"))
        {
            Some(ner_cells)
        } else {
            None
        };
        spans.sort_by_key(|s| (s.sentence, s.start, s.end, s.cluster));
        let doc = CorefDocument {
            doc_id: self.doc_id.clone(),
            sentences,
            pos: has_pos.then_some(pos),
            ner,
            coref_spans: spans,
            conll: Some(ConllRows {
                begin_line: self.begin_line,
                original_id: self.doc_id,
                word_column: layout.word,
                rows: self.rows,
            }),
        };
        doc.validate().map_err(|e| ConllError::Parse {
            line: end_line,
            message: e.to_string(),
        })?;
        Ok(doc)
    }
}

/// Parses every document in `text`.
pub fn read_conll(text: &str) -> Result<Vec<CorefDocument>, ConllError> {
    let mut docs = Vec::new();
    let mut current: Option<Builder> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.starts_with("#begin document") {
            if current.is_some() {
                return Err(ConllError::Parse {
                    line: line_no,
                    message: "nested #begin document".into(),
                });
            }
            current = Some(Builder {
                begin_line: line.to_string(),
                doc_id: doc_id_from_header(line),
                layout: None,
                rows: Vec::new(),
                current: Vec::new(),
            });
            continue;
        }
        if line.starts_with("#end document") {
            let builder = current.take().ok_or_else(|| ConllError::Parse {
                line: line_no,
                message: "#end document without #begin".into(),
            })?;
            docs.push(builder.finish(line_no)?);
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let Some(builder) = current.as_mut() else {
            if line.trim().is_empty() {
                continue;
            }
            return Err(ConllError::Parse {
                line: line_no,
                message: "token line outside a document".into(),
            });
        };
        if line.trim().is_empty() {
            builder.flush_sentence();
            continue;
        }
        let cols: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        let layout = layout_for(cols.len()).ok_or_else(|| ConllError::Parse {
            line: line_no,
            message: format!("expected 6 or at least 12 columns, found {}", cols.len()),
        })?;
        match &builder.layout {
            Some(l) if l.word != layout.word => {
                return Err(ConllError::Parse {
                    line: line_no,
                    message: "column layout changes inside a document".into(),
                })
            }
            Some(_) => {}
            None => builder.layout = Some(layout),
        }
        builder.current.push(cols);
    }
    if current.is_some() {
        return Err(ConllError::Parse {
            line: text.lines().count(),
            message: "unterminated document".into(),
        });
    }
    Ok(docs)
}

fn coref_cells(doc: &CorefDocument, sentence: usize, len: usize) -> Vec<String> {
    let mut cells: Vec<Vec<String>> = vec![Vec::new(); len];
    let mut spans: Vec<&CorefSpan> = doc.coref_spans.iter().filter(|s| s.sentence == sentence).collect();
    // longer spans open first and close last
    spans.sort_by_key(|s| (s.start, std::cmp::Reverse(s.end), s.cluster));
    for s in &spans {
        if s.start == s.end {
            continue;
        }
        cells[s.start].push(format!("({}", s.cluster));
    }
    for s in &spans {
        if s.start == s.end {
            cells[s.start].push(format!("({})", s.cluster));
        }
    }
    spans.sort_by_key(|s| (s.end, std::cmp::Reverse(s.start), s.cluster));
    for s in &spans {
        if s.start != s.end {
            cells[s.end].push(format!("{})", s.cluster));
        }
    }
    cells
        .into_iter()
        .map(|c| if c.is_empty() { "-".to_string() } else { c.join("|") })
        .collect()
}

fn write_document(doc: &CorefDocument, out: &mut String) {
    match &doc.conll {
        Some(raw) => {
            let header = if doc.doc_id == raw.original_id {
                raw.begin_line.clone()
            } else {
                raw.begin_line.replacen(&raw.original_id, &doc.doc_id, 1)
            };
            out.push_str(&header);
            out.push('\n');
            for (s, rows) in raw.rows.iter().enumerate() {
                for (t, row) in rows.iter().enumerate() {
                    let mut cols = row.clone();
                    cols[raw.word_column] = doc.sentences[s][t].clone();
                    if cols[0] == raw.original_id {
                        cols[0] = doc.doc_id.clone();
                    }
                    out.push_str(&cols.join("\t"));
                    out.push('\n');
                }
                out.push('\n');
            }
        }
        None => {
            let _ = writeln!(out, "#begin document ({})", doc.doc_id);
            for (s, tokens) in doc.sentences.iter().enumerate() {
                let ner = doc.ner.as_ref().map(|n| bio_to_brackets(&n[s]));
                let coref = coref_cells(doc, s, tokens.len());
                for (t, word) in tokens.iter().enumerate() {
                    let pos = doc.pos.as_ref().map_or("-", |p| p[s][t].as_str());
                    let ner_cell = ner.as_ref().map_or("*", |n| n[t].as_str());
                    let _ = writeln!(
                        out,
                        "{}\t{}\t{}\t{}\t{}\t{}",
                        doc.doc_id, t, word, pos, ner_cell, coref[t]
                    );
                }
                out.push('\n');
            }
        }
    }
    out.push_str("#end document\n");
}

/// Serializes documents in file order.
pub fn write_conll(docs: &[CorefDocument]) -> String {
    let mut out = String::new();
    for doc in docs {
        write_document(doc, &mut out);
    }
    out
}
