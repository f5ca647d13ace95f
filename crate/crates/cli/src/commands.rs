use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use seqagg::aggregate::{aggregate, AggregateOptions, Method};
use seqagg::bea::{BeaConfig, Granularity};
use seqagg::corpus::{attach_gold, parse_conll, write_conll, write_conll_columns, Corpus, Layer, RepairPolicy};
use seqagg::metrics::{entity_f1, Score};
use seqagg::rare::{
    batches_for, distill, export_silver, finetune, make_schedule, rank_sources, truncate_normalize, MemoTagger,
    SourceWeights, Tagger,
};
use seqagg::spans::{decode_spans, layer_spans, source_spans};
use seqagg::synth::{generate, to_corpus, CorpusLayout, PriorSpec, SourceSpec, SynthConfig};

use crate::args::{
    AggregateArgs, DistillArgs, FinetuneArgs, GlobalArgs, GranularityArg, MethodArg, RankArgs, RepairArgs,
    ScoreArgs, SimulateArgs, SourceArgs,
};
use crate::error::{CliError, CliResult};
use crate::inputs::{label_set, leading_gold, parse_gold, parse_sources, read_sources, write_output, Reader};

/// State shared by a command and the manifest written after it.
pub struct Context<'a> {
    pub global: &'a GlobalArgs,
    pub reader: Reader,
    pub outputs: Vec<String>,
    pub timings: BTreeMap<String, f64>,
    pub config: serde_json::Value,
    started: Instant,
}

impl<'a> Context<'a> {
    pub fn new(global: &'a GlobalArgs) -> Self {
        Self {
            global,
            reader: Reader::default(),
            outputs: Vec::new(),
            timings: BTreeMap::new(),
            config: serde_json::Value::Null,
            started: Instant::now(),
        }
    }

    /// Records the time since the previous phase ended.
    fn phase(&mut self, name: &str) {
        let now = Instant::now();
        self.timings
            .insert(name.to_string(), (now - self.started).as_secs_f64() * 1e3);
        self.started = now;
    }

    fn write(&mut self, path: Option<&Path>, content: &str) -> CliResult<()> {
        write_output(path, content, &mut self.outputs)
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("serializable");
    serde_json::to_string_pretty(&v).expect("value serializes") + "\n"
}

/// Sources plus optional gold-labelled leading sentences, sharing one label set.
fn load_with_gold(
    ctx: &mut Context,
    sources: &SourceArgs,
    gold: Option<&Path>,
) -> CliResult<(Corpus, Option<Corpus>)> {
    let src = read_sources(&mut ctx.reader, sources)?;
    let gold_text = gold.map(|p| ctx.reader.read(p)).transpose()?;
    let mut texts: Vec<&str> = src.texts.iter().map(String::as_str).collect();
    texts.extend(gold_text.as_deref());
    let ls = label_set(ctx.global, &texts)?;
    let corpus = parse_sources(&src, sources, &ls, ctx.global)?;
    let labelled = match (gold, &gold_text) {
        (Some(path), Some(text)) => Some(leading_gold(&corpus, &parse_gold(path, text, &ls, ctx.global)?)?),
        _ => None,
    };
    ctx.phase("load");
    Ok((corpus, labelled))
}

pub fn cmd_aggregate(ctx: &mut Context, a: &AggregateArgs) -> CliResult<()> {
    let method = match a.method {
        MethodArg::Mv => Method::Mv,
        MethodArg::Bea => Method::Bea,
        MethodArg::Bea2 => Method::Bea2,
        MethodArg::BeaSup => Method::BeaSup,
    };
    if method == Method::BeaSup && a.gold.is_none() {
        return Err(CliError::Usage("--method bea-sup requires --gold".into()));
    }
    let granularity = match a.granularity {
        GranularityArg::Token => Granularity::Token,
        GranularityArg::Entity => Granularity::Entity,
    };
    let options = AggregateOptions {
        method,
        bea: BeaConfig {
            alpha: a.alpha,
            beta: a.beta,
            elbo_tol: a.tol,
            max_iter: a.max_iter,
            granularity,
            recall_excludes: None,
        },
        k_keep: a.top_k,
        seed: ctx.global.seed,
        recall_includes_outside: a.recall_includes_outside,
    };
    if method != Method::Mv {
        options.bea.validate()?;
    }
    let (corpus, labelled) = load_with_gold(ctx, &a.sources, a.gold.as_deref())?;
    let mut out = aggregate(&corpus, &options, labelled.as_ref())?;
    ctx.phase("aggregate");
    if let Some(gold) = &labelled {
        let prefix: Vec<usize> = (0..gold.len()).collect();
        let pred = layer_spans(&out.corpus.subset(&prefix), &Layer::Aggregate)?;
        out.report.score = Some(entity_f1(&pred, &layer_spans(gold, &Layer::Gold)?)?);
    }
    ctx.config = json!({ "aggregate": out.report.config, "gold_sentences": labelled.as_ref().map(Corpus::len) });
    let conll = write_conll(&out.corpus, &Layer::Aggregate)?;
    ctx.write(a.out.as_deref(), &conll)?;
    if let Some(path) = &a.report {
        ctx.write(Some(path), &(out.report.to_json() + "\n"))?;
    }
    ctx.phase("write");
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RankReport {
    pub schema: u32,
    pub sources: Vec<String>,
    /// Source ids by decreasing score.
    pub ranking: Vec<String>,
    pub s: Vec<f64>,
    pub k: usize,
    pub omega: Vec<f64>,
}

fn rank(corpus: &Corpus, labelled: &Corpus, top_k: usize) -> CliResult<RankReport> {
    let s = rank_sources(labelled)?;
    let w = truncate_normalize(&s, top_k)?;
    let ids = corpus.source_ids();
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    Ok(RankReport {
        schema: 1,
        sources: ids.to_vec(),
        ranking: order.iter().map(|&j| ids[j].clone()).collect(),
        s: w.s,
        k: w.k,
        omega: w.omega,
    })
}

pub fn cmd_rank(ctx: &mut Context, a: &RankArgs) -> CliResult<()> {
    let (corpus, labelled) = load_with_gold(ctx, &a.sources, Some(&a.gold))?;
    let report = rank(&corpus, labelled.as_ref().expect("gold given"), a.top_k)?;
    ctx.phase("rank");
    ctx.config = json!({ "top_k": a.top_k, "gold_sentences": labelled.map(|g| g.len()) });
    ctx.write(a.out.as_deref(), &to_json(&report))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema: u32,
    pub kind: String,
    pub tagger: MemoTagger,
}

impl ModelFile {
    fn memo(tagger: MemoTagger) -> Self {
        Self {
            schema: 1,
            kind: "memo".into(),
            tagger,
        }
    }
}

fn load_model(ctx: &mut Context, path: &Path) -> CliResult<MemoTagger> {
    let model: ModelFile = ctx.reader.read_json(path)?;
    if model.kind != "memo" {
        return Err(CliError::Core(seqagg::Error::Input(format!(
            "{}: unsupported model kind `{}`",
            path.display(),
            model.kind
        ))));
    }
    Ok(model.tagger)
}

pub fn cmd_distill(ctx: &mut Context, a: &DistillArgs) -> CliResult<()> {
    if a.weights.is_none() && a.gold.is_none() && !a.uniform {
        return Err(CliError::Usage("distill needs one of --weights, --gold or --uniform".into()));
    }
    let (corpus, labelled) = load_with_gold(ctx, &a.sources, a.gold.as_deref())?;
    let h = corpus.num_sources();
    let weights = if let Some(path) = &a.weights {
        let report: RankReport = ctx.reader.read_json(path)?;
        if report.sources != corpus.source_ids() {
            return Err(CliError::Core(seqagg::Error::Input(format!(
                "{}: weights are for sources {:?}, inputs are {:?}",
                path.display(),
                report.sources,
                corpus.source_ids()
            ))));
        }
        SourceWeights {
            s: report.s,
            k: report.k,
            omega: report.omega,
        }
    } else if let Some(gold) = &labelled {
        let r = rank(&corpus, gold, a.top_k)?;
        SourceWeights {
            s: r.s,
            k: r.k,
            omega: r.omega,
        }
    } else {
        truncate_normalize(&vec![1.0; h], h)?
    };
    let schedule = make_schedule(
        &weights,
        batches_for(corpus.len(), a.batch_size, a.epochs),
        a.batch_size,
        ctx.global.seed,
    )?;
    let mut tagger = MemoTagger::new(corpus.label_set().clone());
    distill(&corpus, &schedule, &mut tagger)?;
    ctx.phase("distill");
    ctx.config = json!({
        "epochs": a.epochs,
        "batch_size": a.batch_size,
        "top_k": a.top_k,
        "weights": weights,
        "batches": schedule.assignments.len(),
    });
    ctx.write(Some(&a.out), &to_json(&ModelFile::memo(tagger)))?;
    if let Some(dir) = &a.silver_dir {
        let silver = export_silver(&corpus, &schedule)?;
        fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.clone(),
            source,
        })?;
        for (doc, epoch) in silver.epochs.iter().zip(&silver.manifest.epochs) {
            ctx.write(Some(&dir.join(format!("epoch-{}.conll", epoch.epoch))), doc)?;
        }
        ctx.write(Some(&dir.join("manifest.json")), &to_json(&silver.manifest))?;
    }
    ctx.phase("write");
    Ok(())
}

pub fn cmd_finetune(ctx: &mut Context, a: &FinetuneArgs) -> CliResult<()> {
    let mut tagger = load_model(ctx, &a.model)?;
    let text = ctx.reader.read(&a.gold)?;
    let gold = parse_gold(&a.gold, &text, tagger.label_set(), ctx.global)?;
    ctx.phase("load");
    finetune(&mut tagger, &gold, a.epochs)?;
    ctx.phase("finetune");
    ctx.config = json!({ "epochs": a.epochs, "gold_sentences": gold.len() });
    ctx.write(Some(&a.out), &to_json(&ModelFile::memo(tagger)))
}

#[derive(Debug, Serialize)]
struct ScoreReport {
    schema: u32,
    sentences: usize,
    #[serde(flatten)]
    score: Score,
}

pub fn cmd_score(ctx: &mut Context, a: &ScoreArgs) -> CliResult<()> {
    let gold_text = ctx.reader.read(&a.gold)?;
    let (gold, pred) = match (&a.model, &a.pred) {
        (Some(model), _) => {
            let tagger = load_model(ctx, model)?;
            let gold = parse_gold(&a.gold, &gold_text, tagger.label_set(), ctx.global)?;
            let pred = tagger
                .predict_corpus(&gold)
                .iter()
                .map(|t| decode_spans(t))
                .collect::<seqagg::Result<Vec<_>>>()?;
            (gold, pred)
        }
        (None, Some(path)) => {
            let pred_text = ctx.reader.read(path)?;
            let ls = label_set(ctx.global, &[&gold_text, &pred_text])?;
            let gold = parse_gold(&a.gold, &gold_text, &ls, ctx.global)?;
            let pred = parse_conll(&pred_text, &ls, crate::inputs::policy(ctx.global), &[Layer::Source("pred".into())])
                .map_err(|source| CliError::InFile {
                    path: path.clone(),
                    source,
                })?;
            let joined = attach_gold(pred, &gold)?;
            (gold, source_spans(&joined, 0)?)
        }
        (None, None) => return Err(CliError::Usage("score needs --pred or --model".into())),
    };
    ctx.phase("load");
    let score = entity_f1(&pred, &layer_spans(&gold, &Layer::Gold)?)?;
    ctx.config = json!({ "pred": a.pred, "model": a.model });
    let report = ScoreReport {
        schema: 1,
        sentences: gold.len(),
        score,
    };
    ctx.write(a.out.as_deref(), &to_json(&report))
}

pub fn cmd_simulate(ctx: &mut Context, a: &SimulateArgs) -> CliResult<()> {
    if a.spammers > a.h {
        return Err(CliError::Usage(format!("--spammers {} exceeds --h {}", a.spammers, a.h)));
    }
    let mut sources = vec![SourceSpec::Reliable(a.diag); a.h - a.spammers];
    sources.extend(std::iter::repeat_n(SourceSpec::Spammer, a.spammers));
    let config = SynthConfig {
        instances: a.n,
        classes: a.k,
        prior: match a.prior_concentration {
            Some(c) => PriorSpec::Dirichlet(c),
            None if a.k > 0 => PriorSpec::Fixed(vec![1.0 / a.k as f64; a.k]),
            None => PriorSpec::Fixed(Vec::new()),
        },
        sources,
        seed: ctx.global.seed,
    };
    let layout = CorpusLayout {
        sentence_len: a.sentence_len,
        vocab_per_class: a.vocab,
        seed: ctx.global.seed,
    };
    let problem = generate(&config)?;
    let corpus = to_corpus(&problem, &layout)?;
    ctx.phase("generate");
    fs::create_dir_all(&a.out_dir).map_err(|source| CliError::Io {
        path: a.out_dir.clone(),
        source,
    })?;
    ctx.write(Some(&a.out_dir.join("gold.conll")), &write_conll(&corpus, &Layer::Gold)?)?;
    for id in corpus.source_ids().to_vec() {
        let text = write_conll(&corpus, &Layer::Source(id.clone()))?;
        ctx.write(Some(&a.out_dir.join(format!("{id}.conll"))), &text)?;
    }
    let truth = json!({
        "schema": 1,
        "config": config,
        "layout": layout,
        "pi_true": problem.pi_true,
        "v_true": problem.v_true.iter().map(|m| m.outer_iter().map(|r| r.to_vec()).collect::<Vec<_>>()).collect::<Vec<_>>(),
    });
    ctx.write(Some(&a.out_dir.join("truth.json")), &to_json(&truth))?;
    ctx.config = json!({ "synth": config, "layout": layout });
    ctx.phase("write");
    Ok(())
}

pub fn cmd_repair(ctx: &mut Context, a: &RepairArgs) -> CliResult<()> {
    let text = ctx.reader.read(&a.input)?;
    let ls = label_set(ctx.global, &[&text])?;
    let width = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .map_or(2, |l| l.split_whitespace().count());
    let layers: Vec<Layer> = (1..width.max(2)).map(|j| Layer::Source(format!("s{j}"))).collect();
    let corpus = parse_conll(&text, &ls, RepairPolicy::Repair, &layers).map_err(|source| CliError::InFile {
        path: a.input.clone(),
        source,
    })?;
    let out = write_conll_columns(&corpus, &layers)?;
    let changed: usize = text
        .lines()
        .zip(out.lines())
        .map(|(a, b)| {
            a.split_whitespace()
                .zip(b.split_whitespace())
                .filter(|(x, y)| x != y)
                .count()
        })
        .sum();
    ctx.phase("repair");
    ctx.config = json!({ "repaired_tags": changed });
    ctx.write(a.out.as_deref(), &out)
}
