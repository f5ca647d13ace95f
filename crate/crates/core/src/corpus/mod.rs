//! Token/tag corpora: the label set, tag representation, and CoNLL I/O.

mod bio;
mod conll;

pub use bio::{repair_bio, validate_bio, Violation, ViolationKind};
pub use conll::{
    attach_gold, infer_label_set, merge_sources, parse_conll, write_conll, write_conll_columns, RepairPolicy,
    MISSING_MARKER,
};

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tagging scheme of a label set. Only IOB2 is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TagScheme {
    #[serde(rename = "IOB2")]
    Iob2,
}

/// A token tag. Entity types are indices into [`LabelSet::entity_types`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    O,
    B(usize),
    I(usize),
}

impl Tag {
    /// Position in the token label space: `O` is 0, `B-t` is `2t + 1`, `I-t` is `2t + 2`.
    pub fn index(self) -> usize {
        match self {
            Tag::O => 0,
            Tag::B(t) => 2 * t + 1,
            Tag::I(t) => 2 * t + 2,
        }
    }

    pub fn from_index(index: usize) -> Tag {
        match index {
            0 => Tag::O,
            i if i % 2 == 1 => Tag::B((i - 1) / 2),
            i => Tag::I((i - 2) / 2),
        }
    }

    pub fn entity_type(self) -> Option<usize> {
        match self {
            Tag::O => None,
            Tag::B(t) | Tag::I(t) => Some(t),
        }
    }
}

/// Ordered entity types plus the tagging scheme.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    entity_types: Vec<String>,
    scheme: TagScheme,
}

impl LabelSet {
    pub fn new<I, S>(entity_types: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let entity_types: Vec<String> = entity_types.into_iter().map(Into::into).collect();
        let mut seen = HashSet::new();
        for t in &entity_types {
            if t.is_empty() {
                return Err(Error::LabelSet("empty entity type".into()));
            }
            if t.chars().any(char::is_whitespace) {
                return Err(Error::LabelSet(format!("entity type `{t}` contains whitespace")));
            }
            if !seen.insert(t.as_str()) {
                return Err(Error::LabelSet(format!("duplicate entity type `{t}`")));
            }
        }
        Ok(Self {
            entity_types,
            scheme: TagScheme::Iob2,
        })
    }

    pub fn entity_types(&self) -> &[String] {
        &self.entity_types
    }

    pub fn scheme(&self) -> TagScheme {
        self.scheme
    }

    pub fn num_types(&self) -> usize {
        self.entity_types.len()
    }

    /// Size of the token label space, `2T + 1`.
    pub fn num_token_labels(&self) -> usize {
        2 * self.entity_types.len() + 1
    }

    /// Size of the entity label space, `T + 1` (O plus every type).
    pub fn num_entity_labels(&self) -> usize {
        self.entity_types.len() + 1
    }

    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.entity_types.iter().position(|t| t == name)
    }

    pub fn type_name(&self, etype: usize) -> &str {
        &self.entity_types[etype]
    }

    pub fn parse_tag(&self, s: &str) -> Option<Tag> {
        if s == "O" {
            return Some(Tag::O);
        }
        let (prefix, name) = s.split_once('-')?;
        let t = self.type_index(name)?;
        match prefix {
            "B" => Some(Tag::B(t)),
            "I" => Some(Tag::I(t)),
            _ => None,
        }
    }

    pub fn tag_name(&self, tag: Tag) -> String {
        match tag {
            Tag::O => "O".to_string(),
            Tag::B(t) => format!("B-{}", self.entity_types[t]),
            Tag::I(t) => format!("I-{}", self.entity_types[t]),
        }
    }

    /// Names of the token label space in index order.
    pub fn token_label_names(&self) -> Vec<String> {
        (0..self.num_token_labels())
            .map(|i| self.tag_name(Tag::from_index(i)))
            .collect()
    }

    /// Names of the entity label space in index order (`O` first).
    pub fn entity_label_names(&self) -> Vec<String> {
        std::iter::once("O".to_string())
            .chain(self.entity_types.iter().cloned())
            .collect()
    }
}

/// Which tag layer of a sentence to read or write.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Layer {
    Source(String),
    Gold,
    Aggregate,
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layer::Source(id) => f.write_str(id),
            Layer::Gold => f.write_str("gold"),
            Layer::Aggregate => f.write_str("aggregate"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Sentence {
    pub tokens: Vec<String>,
    /// One entry per corpus source, `None` when that source has no prediction here.
    pub sources: Vec<Option<Vec<Tag>>>,
    pub gold: Option<Vec<Tag>>,
    pub aggregate: Option<Vec<Tag>>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn source(&self, index: usize) -> Option<&[Tag]> {
        self.sources.get(index).and_then(|s| s.as_deref())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    label_set: LabelSet,
    source_ids: Vec<String>,
    sentences: Vec<Sentence>,
}

impl Corpus {
    pub fn new(
        label_set: LabelSet,
        source_ids: Vec<String>,
        sentences: Vec<Sentence>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for id in &source_ids {
            if id.is_empty() || id == "gold" || id == "aggregate" {
                return Err(Error::Input(format!("invalid source id `{id}`")));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::Input(format!("duplicate source id `{id}`")));
            }
        }
        let corpus = Self {
            label_set,
            source_ids,
            sentences,
        };
        for (si, s) in corpus.sentences.iter().enumerate() {
            corpus.check_sentence(si, s)?;
        }
        Ok(corpus)
    }

    fn check_sentence(&self, si: usize, s: &Sentence) -> Result<()> {
        if s.tokens.is_empty() {
            return Err(Error::Input(format!("sentence {si} has no tokens")));
        }
        if let Some(t) = s
            .tokens
            .iter()
            .position(|t| t.is_empty() || t.chars().any(char::is_whitespace))
        {
            return Err(Error::Validation {
                sentence: si,
                token: t,
                reason: "tokens must be non-empty and free of whitespace".into(),
            });
        }
        if s.sources.len() != self.source_ids.len() {
            return Err(Error::Input(format!(
                "sentence {si} carries {} source layers, corpus declares {}",
                s.sources.len(),
                self.source_ids.len()
            )));
        }
        let layers = s
            .sources
            .iter()
            .chain([&s.gold, &s.aggregate])
            .filter_map(Option::as_ref);
        for tags in layers {
            if tags.len() != s.tokens.len() {
                return Err(Error::LengthMismatch {
                    expected: s.tokens.len(),
                    found: tags.len(),
                });
            }
            if let Some(t) = tags
                .iter()
                .position(|t| t.entity_type().is_some_and(|e| e >= self.label_set.num_types()))
            {
                return Err(Error::Validation {
                    sentence: si,
                    token: t,
                    reason: "tag outside the label space".into(),
                });
            }
        }
        Ok(())
    }

    pub fn empty(label_set: LabelSet, source_ids: Vec<String>) -> Result<Self> {
        Self::new(label_set, source_ids, Vec::new())
    }

    pub fn label_set(&self) -> &LabelSet {
        &self.label_set
    }

    pub fn source_ids(&self) -> &[String] {
        &self.source_ids
    }

    pub fn num_sources(&self) -> usize {
        self.source_ids.len()
    }

    pub fn source_index(&self, id: &str) -> Option<usize> {
        self.source_ids.iter().position(|s| s == id)
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    /// Tags of `layer` for sentence `si`, or `None` if absent.
    pub fn layer(&self, si: usize, layer: &Layer) -> Option<&[Tag]> {
        let s = &self.sentences[si];
        match layer {
            Layer::Gold => s.gold.as_deref(),
            Layer::Aggregate => s.aggregate.as_deref(),
            Layer::Source(id) => self.source_index(id).and_then(|j| s.source(j)),
        }
    }

    /// Every sentence's tags for `layer`; fails on the first sentence lacking it.
    pub fn require_layer(&self, layer: &Layer) -> Result<Vec<&[Tag]>> {
        (0..self.len())
            .map(|si| {
                self.layer(si, layer).ok_or_else(|| Error::MissingLayer {
                    sentence: si,
                    layer: layer.to_string(),
                })
            })
            .collect()
    }

    pub fn has_gold(&self) -> bool {
        self.sentences.iter().all(|s| s.gold.is_some())
    }

    /// Replaces the aggregate layer of every sentence.
    pub fn with_aggregate(mut self, layers: Vec<Vec<Tag>>) -> Result<Self> {
        if layers.len() != self.sentences.len() {
            return Err(Error::LengthMismatch {
                expected: self.sentences.len(),
                found: layers.len(),
            });
        }
        for (si, tags) in layers.into_iter().enumerate() {
            self.sentences[si].aggregate = Some(tags);
            let s = &self.sentences[si];
            self.check_sentence(si, s)?;
        }
        Ok(self)
    }

    pub fn with_gold(mut self, layers: Vec<Vec<Tag>>) -> Result<Self> {
        if layers.len() != self.sentences.len() {
            return Err(Error::LengthMismatch {
                expected: self.sentences.len(),
                found: layers.len(),
            });
        }
        for (si, tags) in layers.into_iter().enumerate() {
            self.sentences[si].gold = Some(tags);
            let s = &self.sentences[si];
            self.check_sentence(si, s)?;
        }
        Ok(self)
    }

    /// Keeps only the listed sentences, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Corpus {
        Corpus {
            label_set: self.label_set.clone(),
            source_ids: self.source_ids.clone(),
            sentences: indices.iter().map(|&i| self.sentences[i].clone()).collect(),
        }
    }

    /// Keeps only the listed source columns, in the given order.
    pub fn select_sources(&self, keep: &[usize]) -> Corpus {
        Corpus {
            label_set: self.label_set.clone(),
            source_ids: keep.iter().map(|&j| self.source_ids[j].clone()).collect(),
            sentences: self
                .sentences
                .iter()
                .map(|s| Sentence {
                    tokens: s.tokens.clone(),
                    sources: keep.iter().map(|&j| s.sources[j].clone()).collect(),
                    gold: s.gold.clone(),
                    aggregate: s.aggregate.clone(),
                })
                .collect(),
        }
    }
}
