//! Uniform-ensemble baselines: majority vote at token and entity granularity,
//! and oracle selection of the single best source.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rayon::prelude::*;

use crate::corpus::{Corpus, LabelSet, Layer, Sentence, Tag};
use crate::error::{Error, Result};
use crate::metrics::entity_f1;
use crate::spans::{build_range_view, layer_spans, resolve_conflicts, source_spans, EntitySpan, ScoredSpan};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteResult<L> {
    pub winner: L,
    pub counts: BTreeMap<L, usize>,
    /// Whether two or more labels share the maximal count.
    pub tied: bool,
}

impl<L: Ord> VoteResult<L> {
    pub fn winner_count(&self) -> usize {
        self.counts[&self.winner]
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }
}

/// Generator for the tie draws of sentence `index` under `seed`. Each sentence
/// owns an independent stream, so results do not depend on processing order.
pub fn sentence_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn pick<L: Ord + Clone, R: Rng + ?Sized>(
    counts: BTreeMap<L, usize>,
    rng: &mut R,
    demote: Option<&L>,
) -> VoteResult<L> {
    let max = counts.values().copied().max().unwrap_or(0);
    let mut best: Vec<&L> = counts.iter().filter(|(_, &c)| c == max).map(|(l, _)| l).collect();
    let tied = best.len() > 1;
    if tied {
        if let Some(d) = demote {
            best.retain(|l| *l != d);
        }
    }
    let winner = if best.len() > 1 {
        best[rng.gen_range(0..best.len())].clone()
    } else {
        best[0].clone()
    };
    VoteResult {
        winner,
        counts,
        tied,
    }
}

/// Modal label of `votes`; ties are drawn uniformly from the tied labels.
///
/// The draw only consumes `rng` when there is a tie, and depends only on the
/// (sorted) tied set, so the result is invariant to the order of `votes`.
pub fn mv_token<L: Ord + Clone, R: Rng + ?Sized>(votes: &[L], rng: &mut R) -> Result<VoteResult<L>> {
    if votes.is_empty() {
        return Err(Error::Input("majority vote over no votes".into()));
    }
    let mut counts = BTreeMap::new();
    for v in votes {
        *counts.entry(v.clone()).or_insert(0) += 1;
    }
    Ok(pick(counts, rng, None))
}

/// Token-level majority vote of every sentence. The result may violate IOB2.
pub fn mv_token_corpus(corpus: &Corpus, seed: u64) -> Result<Vec<Vec<Tag>>> {
    corpus
        .sentences()
        .par_iter()
        .enumerate()
        .map(|(si, s)| {
            let layers: Vec<&[Tag]> = s.sources.iter().filter_map(|l| l.as_deref()).collect();
            if layers.is_empty() {
                return Err(Error::Input(format!("sentence {si} has no source predictions")));
            }
            let mut rng = sentence_rng(seed, si);
            (0..s.len())
                .map(|t| {
                    let votes: Vec<Tag> = layers.iter().map(|l| l[t]).collect();
                    mv_token(&votes, &mut rng).map(|r| r.winner)
                })
                .collect()
        })
        .collect()
}

/// Entity-level majority vote: each candidate range takes its modal label
/// (O included), winning ranges become spans scored by vote fraction, and
/// overlaps are resolved greedily.
///
/// When O ties with an entity type the entity type wins; the range was
/// asserted by some source and conflict resolution arbitrates overlaps.
pub fn mv_entity<R: Rng + ?Sized>(
    sentence: &Sentence,
    label_set: &LabelSet,
    rng: &mut R,
) -> Result<Vec<EntitySpan>> {
    let view = build_range_view(sentence)?;
    let mut scored = Vec::new();
    for (r, &(start, end)) in view.ranges.iter().enumerate() {
        let mut counts = BTreeMap::new();
        for labels in view.labels.iter().flatten() {
            *counts.entry(labels[r]).or_insert(0usize) += 1;
        }
        let vote = pick(counts, rng, Some(&0));
        if vote.winner != 0 {
            scored.push(ScoredSpan {
                span: EntitySpan::new(start, end, vote.winner - 1),
                score: vote.winner_count() as f64 / vote.total() as f64,
            });
        }
    }
    Ok(resolve_conflicts(&scored, label_set))
}

pub fn mv_entity_corpus(corpus: &Corpus, seed: u64) -> Result<Vec<Vec<EntitySpan>>> {
    corpus
        .sentences()
        .par_iter()
        .enumerate()
        .map(|(si, s)| mv_entity(s, corpus.label_set(), &mut sentence_rng(seed, si)))
        .collect()
}

/// The source with the highest entity F1 against gold; ties go to the
/// lexicographically smallest source id.
pub fn oracle_select(corpus: &Corpus) -> Result<(String, f64)> {
    let gold = layer_spans(corpus, &Layer::Gold)?;
    let mut best: Option<(&str, f64)> = None;
    for (j, id) in corpus.source_ids().iter().enumerate() {
        let f1 = entity_f1(&source_spans(corpus, j)?, &gold)?.f1;
        let better = match best {
            None => true,
            Some((bid, bf)) => f1 > bf || (f1 == bf && id.as_str() < bid),
        };
        if better {
            best = Some((id, f1));
        }
    }
    best.map(|(id, f1)| (id.to_string(), f1))
        .ok_or_else(|| Error::Input("corpus has no sources".into()))
}
