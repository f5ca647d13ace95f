//! Corpus-level aggregation: builds annotation matrices at token or entity
//! granularity, runs the chosen method, and decodes a valid IOB2 layer.

use serde::{Deserialize, Serialize};

use crate::bea::{
    run_bea, run_supervised, spammer_filter, AnnotationMatrix, BeaConfig, Granularity, Posterior,
    Smoothing, SufficientStats,
};
use crate::corpus::{repair_bio, validate_bio, Corpus, Tag};
use crate::error::{Error, Result};
use crate::metrics::{confusion_report, Score};
use crate::spans::{build_range_view, decode_spans, encode_spans, resolve_conflicts, ScoredSpan, EntitySpan};
use crate::vote::{mv_entity_corpus, mv_token_corpus};

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Mv,
    Bea,
    Bea2,
    BeaSup,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mv => "mv",
            Method::Bea => "bea",
            Method::Bea2 => "bea2",
            Method::BeaSup => "bea-sup",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateOptions {
    pub method: Method,
    pub bea: BeaConfig,
    /// Sources kept by the two-pass method; capped at the number of sources.
    pub k_keep: usize,
    /// Seed for majority-vote ties.
    pub seed: u64,
    /// Count `O` in mean recall (entity granularity only).
    pub recall_includes_outside: bool,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        Self {
            method: Method::Bea,
            bea: BeaConfig::default(),
            k_keep: 10,
            seed: 0,
            recall_includes_outside: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InstanceKey {
    Token { sentence: usize, position: usize },
    Range { sentence: usize, start: usize, end: usize },
}

/// Annotation matrix of a corpus with the location of every instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Instances {
    pub matrix: AnnotationMatrix,
    pub keys: Vec<InstanceKey>,
}

/// One instance per token, classes in the token label space.
pub fn token_instances(corpus: &Corpus) -> Result<Instances> {
    let h = corpus.num_sources();
    let mut labels = Vec::with_capacity(corpus.num_tokens() * h);
    let mut keys = Vec::with_capacity(corpus.num_tokens());
    for (si, s) in corpus.sentences().iter().enumerate() {
        for t in 0..s.len() {
            keys.push(InstanceKey::Token {
                sentence: si,
                position: t,
            });
            for j in 0..h {
                labels.push(s.source(j).map_or(crate::bea::MISSING, |tags| tags[t].index() as u32));
            }
        }
    }
    let matrix = AnnotationMatrix::from_flat(corpus.label_set().num_token_labels(), h, labels)?;
    Ok(Instances { matrix, keys })
}

/// One instance per candidate range, classes in the entity label space.
pub fn entity_instances(corpus: &Corpus) -> Result<Instances> {
    let h = corpus.num_sources();
    let mut labels = Vec::new();
    let mut keys = Vec::new();
    for (si, s) in corpus.sentences().iter().enumerate() {
        let view = build_range_view(s)?;
        for (r, &(start, end)) in view.ranges.iter().enumerate() {
            keys.push(InstanceKey::Range {
                sentence: si,
                start,
                end,
            });
            for layer in &view.labels {
                labels.push(layer.as_ref().map_or(crate::bea::MISSING, |l| l[r] as u32));
            }
        }
    }
    let matrix = AnnotationMatrix::from_flat(corpus.label_set().num_entity_labels(), h, labels)?;
    Ok(Instances { matrix, keys })
}

pub fn instances(corpus: &Corpus, granularity: Granularity) -> Result<Instances> {
    match granularity {
        Granularity::Token => token_instances(corpus),
        Granularity::Entity => entity_instances(corpus),
    }
}

/// Gold label of every instance: the tag index for tokens; for ranges, the
/// entity type if gold holds exactly that span, else `O`.
pub fn gold_labels(corpus: &Corpus, keys: &[InstanceKey]) -> Result<Vec<usize>> {
    let gold = corpus.require_layer(&crate::corpus::Layer::Gold)?;
    let spans: Vec<Vec<EntitySpan>> = gold.iter().map(|g| decode_spans(g)).collect::<Result<_>>()?;
    Ok(keys
        .iter()
        .map(|key| match *key {
            InstanceKey::Token { sentence, position } => gold[sentence][position].index(),
            InstanceKey::Range { sentence, start, end } => spans[sentence]
                .iter()
                .find(|s| s.range() == (start, end))
                .map_or(0, |s| s.etype + 1),
        })
        .collect())
}

/// Token-level MAP labels per sentence, before any IOB2 repair.
pub fn token_labels(corpus: &Corpus, keys: &[InstanceKey], labels: &[usize]) -> Vec<Vec<Tag>> {
    let mut out: Vec<Vec<Tag>> = corpus.sentences().iter().map(|s| vec![Tag::O; s.len()]).collect();
    for (key, &l) in keys.iter().zip(labels) {
        if let InstanceKey::Token { sentence, position } = *key {
            out[sentence][position] = Tag::from_index(l);
        }
    }
    out
}

/// Entity-level decoding: ranges whose MAP label is an entity type become
/// spans scored by their MAP probability, then overlaps are resolved greedily.
pub fn entity_spans(corpus: &Corpus, keys: &[InstanceKey], posterior: &Posterior) -> Vec<Vec<EntitySpan>> {
    let mut scored: Vec<Vec<ScoredSpan>> = vec![Vec::new(); corpus.len()];
    for (i, key) in keys.iter().enumerate() {
        let l = posterior.map_labels[i];
        if let (InstanceKey::Range { sentence, start, end }, true) = (*key, l != 0) {
            scored[sentence].push(ScoredSpan {
                span: EntitySpan::new(start, end, l - 1),
                score: posterior.map_probability(i),
            });
        }
    }
    scored
        .iter()
        .map(|s| resolve_conflicts(s, corpus.label_set()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceReport {
    pub id: String,
    pub mean_recall: Option<f64>,
    /// 1-based position in the mean-recall ranking.
    pub rank: Option<usize>,
    pub kept: bool,
    /// Row-normalized expected confusion, `confusion[true][predicted]`.
    pub confusion: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateReport {
    pub schema: u32,
    pub method: Method,
    pub granularity: Granularity,
    pub config: AggregateOptions,
    /// Class names of the aggregation label space, in index order.
    pub labels: Vec<String>,
    pub sources: Vec<SourceReport>,
    /// Source ids ordered by mean recall, best first.
    pub ranking: Vec<String>,
    pub iterations: usize,
    pub converged: bool,
    pub elbo_trace: Vec<f64>,
    pub first_pass_elbo_trace: Option<Vec<f64>>,
    pub instances: usize,
    /// Tokens rewritten to restore IOB2 validity after token-level decoding.
    pub bio_repairs: usize,
    pub score: Option<Score>,
}

impl AggregateReport {
    /// Pretty JSON with keys sorted at every level.
    pub fn to_json(&self) -> String {
        let value = serde_json::to_value(self).expect("report serializes");
        serde_json::to_string_pretty(&value).expect("value serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    pub corpus: Corpus,
    pub report: AggregateReport,
    /// Final posterior over instances (absent for majority vote).
    pub posterior: Option<Posterior>,
    pub instances: Option<Instances>,
}

fn source_reports(corpus: &Corpus, posterior: Option<&Posterior>, kept: &[usize]) -> (Vec<SourceReport>, Vec<String>) {
    let ids = corpus.source_ids();
    let Some(post) = posterior else {
        let reports = ids
            .iter()
            .map(|id| SourceReport {
                id: id.clone(),
                mean_recall: None,
                rank: None,
                kept: true,
                confusion: None,
            })
            .collect();
        return (reports, Vec::new());
    };
    let ranking = post.ranking();
    let mut rank = vec![0; ids.len()];
    for (r, &j) in ranking.iter().enumerate() {
        rank[j] = r + 1;
    }
    let confusion = confusion_report(post);
    let reports = ids
        .iter()
        .enumerate()
        .map(|(j, id)| SourceReport {
            id: id.clone(),
            mean_recall: Some(post.mean_recall[j]),
            rank: Some(rank[j]),
            kept: kept.contains(&j),
            confusion: Some(confusion.sources[j].matrix.clone()),
        })
        .collect();
    (reports, ranking.iter().map(|&j| ids[j].clone()).collect())
}

/// Aggregates every sentence of `corpus` into its aggregate layer.
///
/// `gold_small` supplies the labelled sentences for [`Method::BeaSup`]; it
/// must carry the same sources as `corpus`.
pub fn aggregate(corpus: &Corpus, options: &AggregateOptions, gold_small: Option<&Corpus>) -> Result<Aggregation> {
    let h = corpus.num_sources();
    if h == 0 {
        return Err(Error::Input("aggregation needs at least one source".into()));
    }
    let granularity = options.bea.granularity;
    let mut config = options.bea.clone();
    config.recall_excludes = match granularity {
        Granularity::Token => Some(0),
        Granularity::Entity if options.recall_includes_outside => None,
        Granularity::Entity => Some(0),
    };
    if options.method != Method::Mv {
        config.validate()?;
    }
    let labels = match granularity {
        Granularity::Token => corpus.label_set().token_label_names(),
        Granularity::Entity => corpus.label_set().entity_label_names(),
    };

    let all: Vec<usize> = (0..h).collect();
    let mut first_pass = None;
    let mut kept = all.clone();
    let (insts, posterior) = match options.method {
        Method::Mv => (None, None),
        Method::Bea => {
            let insts = instances(corpus, granularity)?;
            let post = run_bea(&insts.matrix, &config)?;
            (Some(insts), Some(post))
        }
        Method::Bea2 => {
            let insts = instances(corpus, granularity)?;
            let first = run_bea(&insts.matrix, &config)?;
            let filtered = spammer_filter(&first, &insts.matrix, options.k_keep.min(h), &config)?;
            kept = filtered.kept;
            first_pass = Some(first);
            (Some(insts), Some(filtered.posterior))
        }
        Method::BeaSup => {
            let gold = gold_small.ok_or_else(|| Error::Config("bea-sup needs a gold-labelled corpus".into()))?;
            if gold.source_ids() != corpus.source_ids() || gold.label_set() != corpus.label_set() {
                return Err(Error::Input(
                    "gold corpus must carry the same sources and label set".into(),
                ));
            }
            let gold_insts = instances(gold, granularity)?;
            let z = gold_labels(gold, &gold_insts.keys)?;
            let stats = SufficientStats::from_gold(&gold_insts.matrix, &z)?;
            let insts = instances(corpus, granularity)?;
            let post = run_supervised(&insts.matrix, &stats, &config, Smoothing::Prior)?;
            (Some(insts), Some(post))
        }
    };

    let mut bio_repairs = 0;
    let layers: Vec<Vec<Tag>> = match (granularity, &insts, &posterior) {
        (Granularity::Token, _, _) => {
            let raw = match (&insts, &posterior) {
                (Some(i), Some(p)) => token_labels(corpus, &i.keys, &p.map_labels),
                _ => mv_token_corpus(corpus, options.seed)?,
            };
            raw.into_iter()
                .map(|mut tags| {
                    bio_repairs += validate_bio(&tags).len();
                    repair_bio(&mut tags);
                    tags
                })
                .collect()
        }
        (Granularity::Entity, Some(i), Some(p)) => entity_spans(corpus, &i.keys, p)
            .iter()
            .zip(corpus.sentences())
            .map(|(spans, s)| encode_spans(spans, s.len()))
            .collect::<Result<_>>()?,
        (Granularity::Entity, _, _) => mv_entity_corpus(corpus, options.seed)?
            .iter()
            .zip(corpus.sentences())
            .map(|(spans, s)| encode_spans(spans, s.len()))
            .collect::<Result<_>>()?,
    };

    // Bea2 reports the first-pass confusions, which cover every source.
    let ranked = first_pass.as_ref().or(posterior.as_ref());
    let (sources, ranking) = source_reports(corpus, ranked, &kept);
    let report = AggregateReport {
        schema: REPORT_SCHEMA,
        method: options.method,
        granularity,
        config: AggregateOptions {
            bea: config.clone(),
            ..options.clone()
        },
        labels,
        sources,
        ranking,
        iterations: posterior.as_ref().map_or(0, |p| p.iterations),
        converged: posterior.as_ref().is_none_or(|p| p.converged),
        elbo_trace: posterior.as_ref().map_or_else(Vec::new, |p| p.state.elbo_trace.clone()),
        first_pass_elbo_trace: first_pass.as_ref().map(|p| p.state.elbo_trace.clone()),
        instances: insts.as_ref().map_or(corpus.num_tokens(), |i| i.keys.len()),
        bio_repairs,
        score: None,
    };
    let corpus = corpus.clone().with_aggregate(layers)?;
    Ok(Aggregation {
        corpus,
        report,
        posterior,
        instances: insts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_conll, LabelSet, Layer, RepairPolicy};
    use crate::spans::layer_spans;

    fn table1() -> Corpus {
        let text = "\
w1 B-ORG O O O O
w2 I-ORG B-ORG O B-PER B-PER
w3 I-ORG I-ORG B-ORG I-PER I-PER
w4 I-ORG I-ORG I-ORG I-PER I-PER
";
        let ls = LabelSet::new(["PER", "ORG"]).unwrap();
        let layers: Vec<Layer> = (1..=5).map(|i| Layer::Source(format!("M{i}"))).collect();
        parse_conll(text, &ls, RepairPolicy::Strict, &layers).unwrap()
    }

    fn opts(method: Method, granularity: Granularity) -> AggregateOptions {
        AggregateOptions {
            method,
            bea: BeaConfig {
                granularity,
                ..BeaConfig::default()
            },
            ..AggregateOptions::default()
        }
    }

    #[test]
    fn entity_instances_of_table1() {
        let insts = entity_instances(&table1()).unwrap();
        assert_eq!(insts.keys.len(), 3);
        assert_eq!(insts.matrix.num_classes(), 3);
        // range (1,4): O, ORG, O, PER, PER
        assert_eq!(insts.matrix.column(0)[1], Some(0));
        assert_eq!((0..5).map(|j| insts.matrix.get(1, j).unwrap()).collect::<Vec<_>>(), [0, 2, 0, 1, 1]);
    }

    #[test]
    fn all_outside_sources_aggregate_to_outside() {
        let ls = LabelSet::new(["PER"]).unwrap();
        let layers: Vec<Layer> = (0..3).map(|i| Layer::Source(format!("s{i}"))).collect();
        let c = parse_conll("a O O O\nb O O O\n", &ls, RepairPolicy::Strict, &layers).unwrap();
        for m in [Method::Mv, Method::Bea, Method::Bea2] {
            for g in [Granularity::Token, Granularity::Entity] {
                let out = aggregate(&c, &opts(m, g), None).unwrap();
                assert_eq!(out.corpus.sentences()[0].aggregate.as_deref(), Some(&[Tag::O, Tag::O][..]));
            }
        }
    }

    #[test]
    fn bea_sup_requires_gold() {
        let err = aggregate(&table1(), &opts(Method::BeaSup, Granularity::Token), None).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn entity_outputs_are_valid_bio() {
        for m in [Method::Mv, Method::Bea, Method::Bea2] {
            let out = aggregate(&table1(), &opts(m, Granularity::Entity), None).unwrap();
            let agg = layer_spans(&out.corpus, &Layer::Aggregate).unwrap();
            assert_eq!(agg, [vec![EntitySpan::new(1, 4, 0)]], "{m:?}");
        }
    }

    #[test]
    fn report_json_has_schema_and_sorted_keys() {
        let out = aggregate(&table1(), &opts(Method::Bea, Granularity::Token), None).unwrap();
        let json = out.report.to_json();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["schema"], 1);
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert_eq!(v["sources"].as_array().unwrap().len(), 5);
    }
}
