//! Rank-and-retrain: score sources on a small gold set, keep the top k,
//! distil a tagger from per-batch sampled source labels, then fine-tune it on
//! the gold set.

use std::collections::BTreeMap;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{repair_bio, write_conll_columns, Corpus, LabelSet, Layer, Tag};
use crate::error::{Error, Result};
use crate::metrics::entity_f1;
use crate::spans::{layer_spans, source_spans};
use crate::vote::sentence_rng;

pub const DEFAULT_TOP_K: usize = 10;
pub const DEFAULT_EPOCHS: usize = 5;
pub const DEFAULT_FINETUNE_EPOCHS: usize = 5;
pub const DEFAULT_BATCH_SIZE: usize = 100;

/// Entity F1 of every source against the gold layer.
pub fn rank_sources(corpus: &Corpus) -> Result<Vec<f64>> {
    let gold = layer_spans(corpus, &Layer::Gold)?;
    (0..corpus.num_sources())
        .into_par_iter()
        .map(|j| Ok(entity_f1(&source_spans(corpus, j)?, &gold)?.f1))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceWeights {
    pub s: Vec<f64>,
    pub k: usize,
    pub omega: Vec<f64>,
}

impl SourceWeights {
    /// Indices of sources with positive weight, in source order.
    pub fn support(&self) -> Vec<usize> {
        (0..self.omega.len()).filter(|&h| self.omega[h] > 0.0).collect()
    }
}

/// Keeps the `k` best scores (ties resolved by source order) and normalizes
/// them into mixture weights. `k` larger than the number of sources keeps all.
pub fn truncate_normalize(s: &[f64], k: usize) -> Result<SourceWeights> {
    if k == 0 {
        return Err(Error::Config("truncation rank must be at least 1".into()));
    }
    if let Some(&bad) = s.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::Input(format!("source score {bad} is not a finite non-negative value")));
    }
    let k = k.min(s.len());
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let top = &order[..k];
    let total: f64 = top.iter().map(|&h| s[h]).sum();
    if total <= 0.0 {
        return Err(Error::NoUsableSources);
    }
    let mut omega = vec![0.0; s.len()];
    for &h in top {
        omega[h] = s[h] / total;
    }
    Ok(SourceWeights {
        s: s.to_vec(),
        k,
        omega,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    /// Source index supervising each batch, in training order.
    pub assignments: Vec<usize>,
    pub seed: u64,
    pub batch_size: usize,
}

impl Schedule {
    pub fn counts(&self, num_sources: usize) -> Vec<usize> {
        let mut c = vec![0; num_sources];
        for &h in &self.assignments {
            c[h] += 1;
        }
        c
    }
}

/// Draws the supervising source of each batch i.i.d. from `omega`.
pub fn make_schedule(w: &SourceWeights, n_batches: usize, batch_size: usize, seed: u64) -> Result<Schedule> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let dist = WeightedIndex::new(&w.omega).map_err(|_| Error::NoUsableSources)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let assignments = (0..n_batches).map(|_| dist.sample(&mut rng)).collect();
    Ok(Schedule {
        assignments,
        seed,
        batch_size,
    })
}

/// Number of batches covering `epochs` passes over `sentences` sentences.
pub fn batches_for(sentences: usize, batch_size: usize, epochs: usize) -> usize {
    sentences.div_ceil(batch_size.max(1)) * epochs
}

/// One scheduled batch: the sentences it covers and the source labelling them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Batch {
    pub index: usize,
    pub epoch: usize,
    pub source: usize,
    pub sentences: Vec<usize>,
}

/// Expands a schedule into concrete batches. Each epoch is a seeded shuffle of
/// the corpus cut into `batch_size` chunks; batch `b` belongs to epoch
/// `b / batches_per_epoch`.
pub fn plan_batches(num_sentences: usize, schedule: &Schedule) -> Vec<Batch> {
    if num_sentences == 0 {
        return Vec::new();
    }
    let per_epoch = num_sentences.div_ceil(schedule.batch_size);
    let mut out = Vec::with_capacity(schedule.assignments.len());
    let mut order: Vec<usize> = Vec::new();
    for (b, &source) in schedule.assignments.iter().enumerate() {
        let epoch = b / per_epoch;
        let slot = b % per_epoch;
        if slot == 0 {
            order = (0..num_sentences).collect();
            order.shuffle(&mut sentence_rng(schedule.seed, epoch + 1));
        }
        let lo = slot * schedule.batch_size;
        let hi = (lo + schedule.batch_size).min(num_sentences);
        out.push(Batch {
            index: b,
            epoch,
            source,
            sentences: order[lo..hi].to_vec(),
        });
    }
    out
}

/// A sequence tagger that learns from token/tag pairs.
pub trait Tagger {
    fn label_set(&self) -> &LabelSet;

    /// One update on a batch of `(tokens, tags)` sentences.
    fn train_batch(&mut self, batch: &[(&[String], &[Tag])]);

    /// Predicted tags; same length as `tokens`.
    fn predict(&self, tokens: &[String]) -> Vec<Tag>;

    /// Trains on `layer` of every sentence, one sentence per batch.
    fn train(&mut self, corpus: &Corpus, layer: &Layer) -> Result<()> {
        let tags = corpus.require_layer(layer)?;
        for (s, t) in corpus.sentences().iter().zip(tags) {
            self.train_batch(&[(&s.tokens, t)]);
        }
        Ok(())
    }

    /// `epochs` passes over the gold layer of `gold`, one sentence per batch.
    fn fine_tune(&mut self, gold: &Corpus, epochs: usize) -> Result<()> {
        for _ in 0..epochs {
            self.train(gold, &Layer::Gold)?;
        }
        Ok(())
    }

    fn predict_corpus(&self, corpus: &Corpus) -> Vec<Vec<Tag>> {
        corpus.sentences().iter().map(|s| self.predict(&s.tokens)).collect()
    }
}

/// Counting tagger: predicts each token's most frequent training label, the
/// lowest label index on ties and `O` for unseen tokens, then repairs the
/// sequence to valid IOB2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoTagger {
    label_set: LabelSet,
    counts: BTreeMap<String, Vec<u64>>,
}

impl MemoTagger {
    pub fn new(label_set: LabelSet) -> Self {
        Self {
            label_set,
            counts: BTreeMap::new(),
        }
    }

    pub fn counts(&self, token: &str) -> Option<&[u64]> {
        self.counts.get(token).map(Vec::as_slice)
    }

    pub fn vocabulary_size(&self) -> usize {
        self.counts.len()
    }

    fn modal(&self, token: &str) -> Tag {
        match self.counts.get(token) {
            None => Tag::O,
            Some(c) => {
                let mut best = 0;
                for (l, &n) in c.iter().enumerate() {
                    if n > c[best] {
                        best = l;
                    }
                }
                Tag::from_index(best)
            }
        }
    }
}

impl Tagger for MemoTagger {
    fn label_set(&self) -> &LabelSet {
        &self.label_set
    }

    fn train_batch(&mut self, batch: &[(&[String], &[Tag])]) {
        let k = self.label_set.num_token_labels();
        for (tokens, tags) in batch {
            for (tok, tag) in tokens.iter().zip(tags.iter()) {
                self.counts.entry(tok.clone()).or_insert_with(|| vec![0; k])[tag.index()] += 1;
            }
        }
    }

    fn predict(&self, tokens: &[String]) -> Vec<Tag> {
        let mut tags: Vec<Tag> = tokens.iter().map(|t| self.modal(t)).collect();
        repair_bio(&mut tags);
        tags
    }
}

/// Trains `tagger` batch by batch on the scheduled source's labels, in
/// schedule order.
pub fn distill<T: Tagger + ?Sized>(corpus: &Corpus, schedule: &Schedule, tagger: &mut T) -> Result<()> {
    let batches = plan_batches(corpus.len(), schedule);
    check_scheduled_layers(corpus, schedule)?;
    for batch in &batches {
        let data: Vec<(&[String], &[Tag])> = batch
            .sentences
            .iter()
            .map(|&si| {
                let s = &corpus.sentences()[si];
                (s.tokens.as_slice(), s.source(batch.source).expect("checked above"))
            })
            .collect();
        tagger.train_batch(&data);
    }
    Ok(())
}

fn check_scheduled_layers(corpus: &Corpus, schedule: &Schedule) -> Result<()> {
    let mut used: Vec<usize> = schedule.assignments.clone();
    used.sort_unstable();
    used.dedup();
    for h in used {
        let id = corpus
            .source_ids()
            .get(h)
            .ok_or_else(|| Error::Input(format!("schedule names source {h}, corpus has {}", corpus.num_sources())))?;
        corpus.require_layer(&Layer::Source(id.clone()))?;
    }
    Ok(())
}

/// Fine-tunes on the gold layer for exactly `epochs` passes.
pub fn finetune<T: Tagger + ?Sized>(tagger: &mut T, gold_small: &Corpus, epochs: usize) -> Result<()> {
    tagger.fine_tune(gold_small, epochs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SilverEpoch {
    pub epoch: usize,
    /// Sentence indices in training order.
    pub order: Vec<usize>,
    /// Source id supervising each sentence of `order`.
    pub sources: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SilverManifest {
    pub schema: u32,
    pub seed: u64,
    pub batch_size: usize,
    pub source_ids: Vec<String>,
    /// Supervising source id of every batch.
    pub assignments: Vec<String>,
    pub epochs: Vec<SilverEpoch>,
}

/// The distillation supervision, one CoNLL document per epoch with sentences
/// in training order, plus a manifest describing the schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct SilverExport {
    pub epochs: Vec<String>,
    pub manifest: SilverManifest,
}

pub fn export_silver(corpus: &Corpus, schedule: &Schedule) -> Result<SilverExport> {
    check_scheduled_layers(corpus, schedule)?;
    let ids = corpus.source_ids();
    let batches = plan_batches(corpus.len(), schedule);
    let mut epochs: Vec<SilverEpoch> = Vec::new();
    for b in &batches {
        if epochs.last().is_none_or(|e| e.epoch != b.epoch) {
            epochs.push(SilverEpoch {
                epoch: b.epoch,
                order: Vec::new(),
                sources: Vec::new(),
            });
        }
        let e = epochs.last_mut().expect("pushed above");
        e.order.extend(&b.sentences);
        e.sources.extend(std::iter::repeat_n(ids[b.source].clone(), b.sentences.len()));
    }
    let docs = epochs
        .iter()
        .map(|e| {
            let layers: Vec<Vec<Tag>> = e
                .order
                .iter()
                .zip(&e.sources)
                .map(|(&si, id)| {
                    let j = corpus.source_index(id).expect("known source");
                    corpus.sentences()[si].source(j).expect("checked above").to_vec()
                })
                .collect();
            let part = corpus.subset(&e.order).with_gold(layers)?;
            write_conll_columns(&part, &[Layer::Gold])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SilverExport {
        epochs: docs,
        manifest: SilverManifest {
            schema: 1,
            seed: schedule.seed,
            batch_size: schedule.batch_size,
            source_ids: ids.to_vec(),
            assignments: schedule.assignments.iter().map(|&h| ids[h].clone()).collect(),
            epochs,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RareConfig {
    pub top_k: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub finetune_epochs: usize,
    pub seed: u64,
    /// Uniform scores over all sources and no fine-tuning.
    pub unsupervised: bool,
}

impl Default for RareConfig {
    fn default() -> Self {
        Self {
            top_k: DEFAULT_TOP_K,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            finetune_epochs: DEFAULT_FINETUNE_EPOCHS,
            seed: 0,
            unsupervised: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RareOutcome<T> {
    pub weights: SourceWeights,
    pub schedule: Schedule,
    /// Tagger after distillation, before fine-tuning.
    pub distilled: T,
    pub tagger: T,
}

/// Full pipeline: rank on `gold_small`, truncate, distil on `unlabelled`,
/// fine-tune. The unsupervised variant ignores `gold_small`.
pub fn run_rare<T: Tagger + Clone>(
    unlabelled: &Corpus,
    gold_small: Option<&Corpus>,
    config: &RareConfig,
    mut tagger: T,
) -> Result<RareOutcome<T>> {
    let h = unlabelled.num_sources();
    let weights = if config.unsupervised {
        truncate_normalize(&vec![1.0; h], h)?
    } else {
        let gold = gold_small.ok_or_else(|| Error::Config("ranking needs a gold-labelled corpus".into()))?;
        if gold.source_ids() != unlabelled.source_ids() {
            return Err(Error::Input("gold corpus must carry the same sources".into()));
        }
        truncate_normalize(&rank_sources(gold)?, config.top_k)?
    };
    let n_batches = batches_for(unlabelled.len(), config.batch_size, config.epochs);
    let schedule = make_schedule(&weights, n_batches, config.batch_size, config.seed)?;
    distill(unlabelled, &schedule, &mut tagger)?;
    let distilled = tagger.clone();
    if !config.unsupervised {
        if let Some(gold) = gold_small {
            finetune(&mut tagger, gold, config.finetune_epochs)?;
        }
    }
    Ok(RareOutcome {
        weights,
        schedule,
        distilled,
        tagger,
    })
}
