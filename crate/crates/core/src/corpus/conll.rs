use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::{repair_bio, validate_bio, Corpus, LabelSet, Layer, Sentence, Tag, ViolationKind};
use crate::error::{Error, Result};

/// Column value marking a prediction as absent.
pub const MISSING_MARKER: &str = "_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RepairPolicy {
    /// Reject any IOB2 violation.
    #[default]
    Strict,
    /// Rewrite orphan or mismatched `I-X` to `B-X`.
    Repair,
}

struct PendingSentence {
    tokens: Vec<String>,
    columns: Vec<Vec<Option<Tag>>>,
}

/// Parses whitespace-separated CoNLL text: one token per line followed by one
/// tag column per entry of `layers`, blank lines between sentences.
///
/// A layer is missing for a sentence when every one of its cells is
/// [`MISSING_MARKER`]; a partially missing layer is rejected.
pub fn parse_conll(
    text: &str,
    label_set: &LabelSet,
    policy: RepairPolicy,
    layers: &[Layer],
) -> Result<Corpus> {
    let mut source_ids = Vec::new();
    let mut seen_gold = false;
    let mut seen_agg = false;
    for layer in layers {
        let dup = match layer {
            Layer::Source(id) => {
                let dup = source_ids.contains(id);
                source_ids.push(id.clone());
                dup
            }
            Layer::Gold => std::mem::replace(&mut seen_gold, true),
            Layer::Aggregate => std::mem::replace(&mut seen_agg, true),
        };
        if dup {
            return Err(Error::Config(format!("layer `{layer}` listed twice")));
        }
    }

    let width = layers.len() + 1;
    let mut sentences = Vec::new();
    let mut pending = PendingSentence {
        tokens: Vec::new(),
        columns: vec![Vec::new(); layers.len()],
    };

    for (lineno, line) in text.lines().enumerate() {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            flush(&mut pending, &mut sentences, layers, policy)?;
            continue;
        }
        if cols.len() != width {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("expected {width} columns, found {}", cols.len()),
            });
        }
        pending.tokens.push(cols[0].to_string());
        for (c, raw) in cols[1..].iter().enumerate() {
            let tag = if *raw == MISSING_MARKER {
                None
            } else {
                Some(label_set.parse_tag(raw).ok_or_else(|| Error::UnknownTag {
                    line: lineno + 1,
                    tag: raw.to_string(),
                })?)
            };
            pending.columns[c].push(tag);
        }
    }
    flush(&mut pending, &mut sentences, layers, policy)?;

    Corpus::new(label_set.clone(), source_ids, sentences)
}

fn flush(
    pending: &mut PendingSentence,
    sentences: &mut Vec<Sentence>,
    layers: &[Layer],
    policy: RepairPolicy,
) -> Result<()> {
    if pending.tokens.is_empty() {
        return Ok(());
    }
    let si = sentences.len();
    let mut sentence = Sentence {
        tokens: std::mem::take(&mut pending.tokens),
        ..Default::default()
    };
    for (layer, column) in layers.iter().zip(pending.columns.iter_mut()) {
        let column = std::mem::take(column);
        let tags = if column.iter().all(Option::is_none) {
            None
        } else if let Some(t) = column.iter().position(Option::is_none) {
            return Err(Error::Validation {
                sentence: si,
                token: t,
                reason: format!("layer `{layer}` is only partially present"),
            });
        } else {
            let mut tags: Vec<Tag> = column.into_iter().flatten().collect();
            match policy {
                RepairPolicy::Strict => {
                    if let Some(v) = validate_bio(&tags).first() {
                        let reason = match v.kind {
                            ViolationKind::OrphanInside => "orphan I- tag",
                            ViolationKind::TypeMismatch => "I- tag changes entity type",
                        };
                        return Err(Error::Validation {
                            sentence: si,
                            token: v.index,
                            reason: format!("{reason} in layer `{layer}`"),
                        });
                    }
                }
                RepairPolicy::Repair => repair_bio(&mut tags),
            }
            Some(tags)
        };
        match layer {
            Layer::Source(_) => sentence.sources.push(tags),
            Layer::Gold => sentence.gold = tags,
            Layer::Aggregate => sentence.aggregate = tags,
        }
    }
    sentences.push(sentence);
    Ok(())
}

/// Writes one tag layer as two-column CoNLL. Inverse of [`parse_conll`] with `&[layer]`.
pub fn write_conll(corpus: &Corpus, layer: &Layer) -> Result<String> {
    let layers = corpus.require_layer(layer)?;
    let ls = corpus.label_set();
    let mut out = String::new();
    for (s, tags) in corpus.sentences().iter().zip(layers) {
        for (tok, &tag) in s.tokens.iter().zip(tags) {
            let _ = writeln!(out, "{tok} {}", ls.tag_name(tag));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Writes several layers side by side; absent layers are written as [`MISSING_MARKER`].
pub fn write_conll_columns(corpus: &Corpus, layers: &[Layer]) -> Result<String> {
    for layer in layers {
        if let Layer::Source(id) = layer {
            if corpus.source_index(id).is_none() {
                return Err(Error::Input(format!("unknown source `{id}`")));
            }
        }
    }
    let ls = corpus.label_set();
    let mut out = String::new();
    for si in 0..corpus.len() {
        let s = &corpus.sentences()[si];
        let cols: Vec<Option<&[Tag]>> = layers.iter().map(|l| corpus.layer(si, l)).collect();
        for (ti, tok) in s.tokens.iter().enumerate() {
            out.push_str(tok);
            for col in &cols {
                out.push(' ');
                match col {
                    Some(tags) => out.push_str(&ls.tag_name(tags[ti])),
                    None => out.push_str(MISSING_MARKER),
                }
            }
            out.push('\n');
        }
        out.push('\n');
    }
    Ok(out)
}

/// Collects the entity types used by any tag column of `text`, sorted by name.
pub fn infer_label_set(texts: &[&str]) -> Result<LabelSet> {
    let mut types = BTreeSet::new();
    for text in texts {
        for line in text.lines() {
            for col in line.split_whitespace().skip(1) {
                if let Some(("B" | "I", name)) = col.split_once('-') {
                    types.insert(name.to_string());
                }
            }
        }
    }
    LabelSet::new(types)
}

/// Combines single-source corpora over the same sentences into one multi-source corpus.
/// Each part contributes its first source layer under the given id.
pub fn merge_sources(parts: Vec<(String, Corpus)>) -> Result<Corpus> {
    let Some((_, first)) = parts.first() else {
        return Err(Error::Input("no source corpora given".into()));
    };
    let label_set = first.label_set().clone();
    let n = first.len();
    let mut sentences: Vec<Sentence> = first
        .sentences()
        .iter()
        .map(|s| Sentence {
            tokens: s.tokens.clone(),
            ..Default::default()
        })
        .collect();
    let mut ids = Vec::with_capacity(parts.len());
    for (id, part) in parts {
        if part.label_set() != &label_set {
            return Err(Error::Input(format!("source `{id}` uses a different label set")));
        }
        if part.len() != n {
            return Err(Error::Input(format!(
                "source `{id}` has {} sentences, expected {n}",
                part.len()
            )));
        }
        if part.num_sources() == 0 {
            return Err(Error::Input(format!("source `{id}` has no tag layer")));
        }
        for (si, (dst, src)) in sentences.iter_mut().zip(part.sentences()).enumerate() {
            if dst.tokens != src.tokens {
                return Err(Error::Input(format!(
                    "source `{id}` disagrees on the tokens of sentence {si}"
                )));
            }
            dst.sources.push(src.sources[0].clone());
        }
        ids.push(id);
    }
    Corpus::new(label_set, ids, sentences)
}

/// Copies the gold layer of `gold` onto `corpus`; both must cover the same tokens.
pub fn attach_gold(corpus: Corpus, gold: &Corpus) -> Result<Corpus> {
    if gold.len() != corpus.len() {
        return Err(Error::Input(format!(
            "gold has {} sentences, expected {}",
            gold.len(),
            corpus.len()
        )));
    }
    let layers = gold.require_layer(&Layer::Gold)?;
    for (si, (a, b)) in corpus.sentences().iter().zip(gold.sentences()).enumerate() {
        if a.tokens != b.tokens {
            return Err(Error::Input(format!(
                "gold disagrees on the tokens of sentence {si}"
            )));
        }
    }
    let layers = layers.into_iter().map(<[Tag]>::to_vec).collect();
    corpus.with_gold(layers)
}
