//! Entity spans over token sequences, the per-sentence range view used for
//! entity-granularity aggregation, and greedy conflict resolution.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::Serialize;

use crate::corpus::{validate_bio, Corpus, LabelSet, Layer, Sentence, Tag};
use crate::error::{Error, Result};

/// Half-open token range `[start, end)` carrying an entity type index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub etype: usize,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, etype: usize) -> Self {
        debug_assert!(start < end);
        Self { start, end, etype }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn range(&self) -> (usize, usize) {
        (self.start, self.end)
    }

    pub fn overlaps(&self, other: &EntitySpan) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredSpan {
    pub span: EntitySpan,
    pub score: f64,
}

/// Maximal `B-X (I-X)*` runs of a valid IOB2 sequence, sorted by start.
pub fn decode_spans(tags: &[Tag]) -> Result<Vec<EntitySpan>> {
    if let Some(v) = validate_bio(tags).first() {
        return Err(Error::Input(format!(
            "invalid IOB2 at token {} ({:?})",
            v.index, v.kind
        )));
    }
    let mut spans = Vec::new();
    let mut open: Option<(usize, usize)> = None;
    for (i, &tag) in tags.iter().enumerate() {
        match tag {
            Tag::I(_) => {}
            Tag::B(t) => {
                if let Some((s, et)) = open.take() {
                    spans.push(EntitySpan::new(s, i, et));
                }
                open = Some((i, t));
            }
            Tag::O => {
                if let Some((s, et)) = open.take() {
                    spans.push(EntitySpan::new(s, i, et));
                }
            }
        }
    }
    if let Some((s, et)) = open {
        spans.push(EntitySpan::new(s, tags.len(), et));
    }
    Ok(spans)
}

/// Inverse of [`decode_spans`]: pairwise-disjoint spans to an IOB2 sequence of `len` tags.
pub fn encode_spans(spans: &[EntitySpan], len: usize) -> Result<Vec<Tag>> {
    let mut tags = vec![Tag::O; len];
    let mut taken = vec![false; len];
    for sp in spans {
        if sp.start >= sp.end || sp.end > len {
            return Err(Error::Input(format!(
                "span [{}, {}) outside a sentence of length {len}",
                sp.start, sp.end
            )));
        }
        if taken[sp.start..sp.end].iter().any(|&t| t) {
            return Err(Error::Input(format!(
                "span [{}, {}) overlaps another span",
                sp.start, sp.end
            )));
        }
        taken[sp.start..sp.end].iter_mut().for_each(|t| *t = true);
        tags[sp.start] = Tag::B(sp.etype);
        for t in &mut tags[sp.start + 1..sp.end] {
            *t = Tag::I(sp.etype);
        }
    }
    Ok(tags)
}

/// Candidate ranges of one sentence and every source's label for each range.
///
/// Labels live in the entity label space: 0 is `O`, `t + 1` is entity type `t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RangeView {
    pub ranges: Vec<(usize, usize)>,
    /// Per source; `None` when the source has no prediction for the sentence.
    pub labels: Vec<Option<Vec<usize>>>,
}

impl RangeView {
    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }
}

pub fn build_range_view(sentence: &Sentence) -> Result<RangeView> {
    let decoded: Vec<Option<Vec<EntitySpan>>> = sentence
        .sources
        .iter()
        .map(|layer| layer.as_deref().map(decode_spans).transpose())
        .collect::<Result<_>>()?;
    let ranges: Vec<(usize, usize)> = decoded
        .iter()
        .flatten()
        .flatten()
        .map(EntitySpan::range)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let labels = decoded
        .into_iter()
        .map(|spans| {
            spans.map(|spans| {
                ranges
                    .iter()
                    .map(|&r| {
                        spans
                            .iter()
                            .find(|s| s.range() == r)
                            .map_or(0, |s| s.etype + 1)
                    })
                    .collect()
            })
        })
        .collect();
    Ok(RangeView { ranges, labels })
}

/// Priority of a scored span: higher score first, then earlier start, then
/// longer span, then entity type name.
fn priority(a: &ScoredSpan, b: &ScoredSpan, label_set: &LabelSet) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.span.start.cmp(&b.span.start))
        .then(b.span.len().cmp(&a.span.len()))
        .then_with(|| {
            label_set
                .type_name(a.span.etype)
                .cmp(label_set.type_name(b.span.etype))
        })
}

/// Greedy sweep in priority order keeping every span that overlaps nothing
/// already kept. Output is sorted by start.
pub fn resolve_conflicts(spans: &[ScoredSpan], label_set: &LabelSet) -> Vec<EntitySpan> {
    let mut order: Vec<&ScoredSpan> = spans.iter().collect();
    order.sort_by(|a, b| priority(a, b, label_set));
    let mut kept: Vec<EntitySpan> = Vec::new();
    for s in order {
        if !kept.iter().any(|k| k.overlaps(&s.span)) {
            kept.push(s.span);
        }
    }
    kept.sort();
    kept
}

/// Decoded spans of `layer` for every sentence; fails if any sentence lacks it.
pub fn layer_spans(corpus: &Corpus, layer: &Layer) -> Result<Vec<Vec<EntitySpan>>> {
    corpus
        .require_layer(layer)?
        .into_iter()
        .map(decode_spans)
        .collect()
}

/// Decoded spans of source `j`; a missing prediction counts as no entities.
pub fn source_spans(corpus: &Corpus, j: usize) -> Result<Vec<Vec<EntitySpan>>> {
    corpus
        .sentences()
        .iter()
        .map(|s| s.source(j).map_or(Ok(Vec::new()), decode_spans))
        .collect()
}
