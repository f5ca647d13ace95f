//! Acceptance gate. Runs every criterion, prints one line each, and exits
//! non-zero if any fails.

use std::time::{Duration, Instant};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use seqagg::aggregate::{aggregate, AggregateOptions, Method};
use seqagg::bea::{
    run_bea, spammer_filter, supervised_estimate, update_pi, update_v, AnnotationMatrix, BeaConfig, Granularity,
    Smoothing, SufficientStats, VariationalState,
};
use seqagg::corpus::{parse_conll, validate_bio, write_conll_columns, Corpus, LabelSet, Layer, RepairPolicy, Tag, ViolationKind};
use seqagg::metrics::entity_f1;
use seqagg::rare::{make_schedule, run_rare, truncate_normalize, MemoTagger, RareConfig, Tagger};
use seqagg::spans::{layer_spans, EntitySpan};
use seqagg::special::digamma;
use seqagg::synth::{generate, recovery_error, to_corpus, CorpusLayout, PriorSpec, SourceSpec, SynthConfig};
use seqagg::vote::{mv_token, mv_token_corpus, sentence_rng};

mod common;
use common::{enumerate_posterior, random_corpus_text};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn timed(limit: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let out = f();
    let took = start.elapsed();
    let note = format!(" [{:.2}s, limit {}s]", took.as_secs_f64(), limit.as_secs());
    match out {
        Ok(d) if took <= limit => Ok(d + &note),
        Ok(d) => Err(d + &note + " too slow"),
        Err(d) => Err(d + &note),
    }
}

const TABLE1: &str = "\
w1 B-ORG O O O O
w2 I-ORG B-ORG O B-PER B-PER
w3 I-ORG I-ORG B-ORG I-PER I-PER
w4 I-ORG I-ORG I-ORG I-PER I-PER
";

fn table1() -> Corpus {
    let ls = LabelSet::new(["PER", "ORG"]).unwrap();
    let layers: Vec<Layer> = (1..=5).map(|i| Layer::Source(format!("M{i}"))).collect();
    parse_conll(TABLE1, &ls, RepairPolicy::Strict, &layers).unwrap()
}

fn table1_reproduction() -> Outcome {
    let corpus = table1();
    let want = vec![vec![EntitySpan::new(1, 4, 0)]];
    for method in [Method::Mv, Method::Bea] {
        let opts = AggregateOptions {
            method,
            bea: BeaConfig {
                granularity: Granularity::Entity,
                ..BeaConfig::default()
            },
            ..AggregateOptions::default()
        };
        let out = aggregate(&corpus, &opts, None).map_err(|e| e.to_string())?;
        let spans = layer_spans(&out.corpus, &Layer::Aggregate).map_err(|e| e.to_string())?;
        if spans != want {
            return Err(format!("{method:?} entity output {spans:?}"));
        }
    }
    // w3 holds a two-way I-ORG / I-PER tie; take the first seed resolving it to I-ORG.
    let seed = (0..64u64)
        .find(|&s| mv_token_corpus(&corpus, s).unwrap()[0][2] == Tag::I(1))
        .ok_or("no seed resolves the w3 tie to I-ORG")?;
    let row = mv_token_corpus(&corpus, seed).map_err(|e| e.to_string())?.remove(0);
    let violations = validate_bio(&row);
    check(
        row == [Tag::O, Tag::B(0), Tag::I(1), Tag::I(1)]
            && violations.len() == 1
            && violations[0].index == 2
            && violations[0].kind == ViolationKind::TypeMismatch,
        format!("entity MV/BEA -> PER[2,4]; token MV (seed {seed}) -> {row:?}, violations {violations:?}"),
    )
}

fn mv_matrix(y: &AnnotationMatrix, seed: u64) -> Vec<usize> {
    (0..y.num_instances())
        .map(|i| {
            let votes: Vec<usize> = y.observed(i).map(|(_, l)| l).collect();
            mv_token(&votes, &mut sentence_rng(seed, i)).unwrap().winner
        })
        .collect()
}

fn accuracy(a: &[usize], b: &[usize]) -> f64 {
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}

fn synthetic_recovery() -> Outcome {
    let mut sources = vec![SourceSpec::Reliable(0.9); 3];
    sources.extend(vec![SourceSpec::Spammer; 7]);
    let mut wins = 0;
    let mut worst_l1: f64 = 0.0;
    let mut gaps = Vec::new();
    for seed in 0..20 {
        let p = generate(&SynthConfig {
            instances: 5000,
            classes: 4,
            prior: PriorSpec::Fixed(vec![0.25; 4]),
            sources: sources.clone(),
            seed,
        })
        .map_err(|e| e.to_string())?;
        let post = run_bea(&p.y, &BeaConfig::default()).map_err(|e| e.to_string())?;
        let rec = recovery_error(&post, &p).map_err(|e| e.to_string())?;
        let mv = accuracy(&mv_matrix(&p.y, seed), &p.z_true);
        let gap = rec.accuracy - mv;
        gaps.push(gap);
        if gap >= 0.05 {
            wins += 1;
        }
        for j in 0..3 {
            worst_l1 = worst_l1.max(rec.confusion_l1[j]);
        }
    }
    let min_gap = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    check(
        wins >= 19 && worst_l1 <= 0.05,
        format!("BEA beats MV by >=5 points on {wins}/20 seeds (min gap {min_gap:.3}); worst reliable L1 {worst_l1:.4}"),
    )
}

fn adversary_config(seed: u64) -> SynthConfig {
    let k = 4;
    let mut sources = vec![SourceSpec::Reliable(1.0); 2];
    for a in 0..8 {
        let shift = 1 + a % (k - 1);
        sources.push(SourceSpec::Adversary {
            diag: 0.6,
            permutation: (0..k).map(|c| (c + shift) % k).collect(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sources.shuffle(&mut rng);
    SynthConfig {
        instances: 1000,
        classes: k,
        prior: PriorSpec::Fixed(vec![0.25; k]),
        sources,
        seed,
    }
}

fn bea2_filter() -> Outcome {
    let mut hits = 0;
    let cfg = BeaConfig::default();
    for seed in 0..20 {
        let sc = adversary_config(seed);
        let perfect: Vec<usize> = (0..sc.sources.len())
            .filter(|&j| sc.sources[j] == SourceSpec::Reliable(1.0))
            .collect();
        let p = generate(&sc).map_err(|e| e.to_string())?;
        let first = run_bea(&p.y, &cfg).map_err(|e| e.to_string())?;
        let out = spammer_filter(&first, &p.y, 2, &cfg).map_err(|e| e.to_string())?;
        if out.kept == perfect {
            hits += 1;
        }
    }
    check(hits == 20, format!("kept exactly the perfect pair on {hits}/20 seeds"))
}

fn elbo_monotone() -> Outcome {
    let mut worst = 0.0_f64;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for seed in 0..100 {
        let k = rng.gen_range(2..=5);
        let h = rng.gen_range(2..=6);
        let sources = (0..h)
            .map(|_| match rng.gen_range(0..3) {
                0 => SourceSpec::Spammer,
                _ => SourceSpec::Reliable(rng.gen_range(0.3..0.95)),
            })
            .collect();
        let p = generate(&SynthConfig {
            instances: rng.gen_range(20..200),
            classes: k,
            prior: PriorSpec::Dirichlet(1.0),
            sources,
            seed,
        })
        .map_err(|e| e.to_string())?;
        let cfg = BeaConfig {
            alpha: rng.gen_range(0.5..2.0),
            beta: rng.gen_range(0.5..2.0),
            elbo_tol: 1e-10,
            ..BeaConfig::default()
        };
        let post = run_bea(&p.y, &cfg).map_err(|e| e.to_string())?;
        for w in post.state.elbo_trace.windows(2) {
            worst = worst.min(w[1] - w[0]);
        }
    }
    if worst < -1e-8 {
        return Err(format!("ELBO dropped by {:.3e}", 0.0 - worst));
    }
    let (problems, compared, agreed, bound_ok, at_uniform) = enumeration_oracle()?;
    check(
        bound_ok == problems && agreed == compared && compared > 0,
        format!(
            "largest ELBO drop {:.2e} over 100 problems; enumeration: ELBO <= log evidence on {bound_ok}/{problems}, MAP agrees on {agreed}/{compared} confident instances ({at_uniform} of the misses converged to uniform q(z))",
            0.0 - worst
        ),
    )
}

/// Exact enumeration on small simulator problems. The posterior is symmetric
/// under relabelling, so exact marginals are taken over the labellings that
/// agree best with BEA's own MAP (the alignment recovery_error uses).
fn enumeration_oracle() -> Result<(usize, usize, usize, usize, usize), String> {
    let cfg = BeaConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut problems, mut compared, mut agreed, mut bound_ok, mut at_uniform) = (0, 0, 0, 0, 0);
    for _ in 0..500 {
        let sources = (0..2).map(|_| SourceSpec::Reliable(rng.gen_range(0.55..0.95))).collect();
        let y = generate(&SynthConfig {
            instances: 4,
            classes: 2,
            prior: PriorSpec::Dirichlet(1.0),
            sources,
            seed: rng.gen(),
        })
        .map_err(|e| e.to_string())?
        .y;
        let post = run_bea(&y, &cfg).map_err(|e| e.to_string())?;
        let exact = enumerate_posterior(&y, cfg.alpha, cfg.beta, &post.map_labels);
        problems += 1;
        if *post.state.elbo_trace.last().unwrap() <= exact.log_evidence + 1e-9 {
            bound_ok += 1;
        }
        for (i, m) in exact.marginals.iter().enumerate() {
            if (m[0] - m[1]).abs() > 0.1 {
                compared += 1;
                if post.map_labels[i] == usize::from(m[1] > m[0]) {
                    agreed += 1;
                } else if (post.state.qz[[i, 0]] - 0.5).abs() < 1e-3 {
                    at_uniform += 1;
                }
            }
        }
    }
    Ok((problems, compared, agreed, bound_ok, at_uniform))
}

fn closed_forms() -> Outcome {
    let euler = 0.577_215_664_901_532_9_f64;
    let d1 = (digamma(1.0).unwrap() + euler).abs();
    let d2 = (digamma(2.0).unwrap() - (1.0 - euler)).abs();
    let d05 = (digamma(0.5).unwrap() + euler + 2.0 * 2f64.ln()).abs();
    // one instance with one observation per class count n=1 of K=2 with β=1
    let stats = SufficientStats::new(ndarray::arr1(&[2.0, 0.0]), ndarray::Array3::zeros((1, 2, 2))).unwrap();
    let cfg = BeaConfig::default();
    let (prior, _) = supervised_estimate(&stats, &cfg, Smoothing::Prior).map_err(|e| e.to_string())?;
    let rec = (prior.elog[0] - (-1.0 / 3.0)).abs();
    // single instance, K=2, one source observing label 0, q(z) one-hot at 0
    let y = AnnotationMatrix::new(2, 1, vec![vec![Some(0)]]).unwrap();
    let state = VariationalState::from_qz(ndarray::arr2(&[[1.0, 0.0]]), 1, &cfg);
    let pi = update_pi(&state, &cfg);
    let v = update_v(&state, &y, &cfg);
    let hand = [
        (pi.elog[0], -0.5),
        (pi.elog[1], -1.5),
        (v.elog[[0, 0, 0]], -0.5),
        (v.elog[[0, 0, 1]], -1.5),
        (v.elog[[0, 1, 0]], -1.0),
    ];
    let hand_err = hand.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    check(
        d1 < 1e-10 && d2 < 1e-10 && d05 < 1e-10 && rec <= 4.0 * f64::EPSILON && hand_err < 1e-12,
        format!("digamma errors {d1:.1e}/{d2:.1e}/{d05:.1e}; psi(3)-psi(4) error {rec:.1e}; hand values error {hand_err:.1e}"),
    )
}

fn scheduler() -> Outcome {
    let w = truncate_normalize(&[0.5, 0.5], 2).map_err(|e| e.to_string())?;
    let mut inside = 0;
    let mut worst = 0;
    for seed in 0..20 {
        let s = make_schedule(&w, 10_000, 1, seed).map_err(|e| e.to_string())?;
        let c = s.counts(2)[0];
        worst = worst.max(c.abs_diff(5000));
        if c.abs_diff(5000) <= 150 {
            inside += 1;
        }
    }
    let a = make_schedule(&w, 10_000, 1, 99).unwrap();
    let b = make_schedule(&w, 10_000, 1, 99).unwrap();
    check(
        inside == 20 && a == b,
        format!("within 5000±150 on {inside}/20 seeds (max deviation {worst}); repeat run identical: {}", a == b),
    )
}

fn rare_end_to_end() -> Outcome {
    let k = 4;
    let sources = vec![
        SourceSpec::Reliable(0.85),
        SourceSpec::Reliable(0.7),
        SourceSpec::Reliable(0.55),
        SourceSpec::Spammer,
        SourceSpec::Spammer,
        SourceSpec::Reliable(0.4),
    ];
    let p = generate(&SynthConfig {
        instances: 4000,
        classes: k,
        prior: PriorSpec::Fixed(vec![0.55, 0.15, 0.15, 0.15]),
        sources,
        seed: 3,
    })
    .map_err(|e| e.to_string())?;
    let layout = CorpusLayout {
        vocab_per_class: 150,
        ..CorpusLayout::default()
    };
    let corpus = to_corpus(&p, &layout).map_err(|e| e.to_string())?;
    // 400 sentences: 100 gold, 200 unlabelled, 100 held out.
    let idx: Vec<usize> = (0..corpus.len()).collect();
    let gold = corpus.subset(&idx[..100]);
    let unlabelled = corpus.subset(&idx[100..300]);
    let test = corpus.subset(&idx[300..]);
    let cfg = RareConfig {
        top_k: 3,
        seed: 5,
        ..RareConfig::default()
    };
    let out = run_rare(&unlabelled, Some(&gold), &cfg, MemoTagger::new(corpus.label_set().clone()))
        .map_err(|e| e.to_string())?;
    let truth = layer_spans(&test, &Layer::Gold).map_err(|e| e.to_string())?;
    let f1 = |t: &MemoTagger| -> Result<f64, String> {
        let pred: Vec<Vec<EntitySpan>> = t
            .predict_corpus(&test)
            .iter()
            .map(|tags| seqagg::spans::decode_spans(tags))
            .collect::<seqagg::Result<_>>()
            .map_err(|e| e.to_string())?;
        Ok(entity_f1(&pred, &truth).map_err(|e| e.to_string())?.f1)
    };
    let distilled = f1(&out.distilled)?;
    let tuned = f1(&out.tagger)?;
    check(
        tuned >= distilled && distilled > 0.0,
        format!("held-out entity F1: distilled {distilled:.3}, fine-tuned {tuned:.3}; kept {:?}", out.weights.support()),
    )
}

fn io_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut failures = 0;
    let mut repair_failures = 0;
    for _ in 0..1000 {
        let (text, ls, layers, valid) = random_corpus_text(&mut rng);
        if valid {
            match parse_conll(&text, &ls, RepairPolicy::Strict, &layers) {
                Ok(c) if write_conll_columns(&c, &layers).ok().as_deref() == Some(text.as_str()) => {}
                _ => failures += 1,
            }
        }
        match parse_conll(&text, &ls, RepairPolicy::Repair, &layers) {
            Ok(c) => {
                let bad = c.sentences().iter().any(|s| {
                    (0..c.num_sources()).filter_map(|j| s.source(j)).any(|t| !validate_bio(t).is_empty())
                        || s.gold.as_deref().is_some_and(|t| !validate_bio(t).is_empty())
                });
                if bad {
                    repair_failures += 1;
                }
            }
            Err(_) => repair_failures += 1,
        }
    }
    check(
        failures == 0 && repair_failures == 0,
        format!("round-trip failures {failures}/1000; repair-mode corpora with violations {repair_failures}/1000"),
    )
}

fn main() {
    let criteria: [(&str, Box<dyn FnOnce() -> Outcome>); 8] = [
        ("table1-reproduction", Box::new(|| timed(Duration::from_secs(1), table1_reproduction))),
        ("synthetic-recovery", Box::new(|| timed(Duration::from_secs(30), synthetic_recovery))),
        ("bea2-filter", Box::new(bea2_filter)),
        ("elbo-monotonicity", Box::new(elbo_monotone)),
        ("closed-forms", Box::new(closed_forms)),
        ("scheduler-statistics", Box::new(scheduler)),
        ("rare-end-to-end", Box::new(|| timed(Duration::from_secs(10), rare_end_to_end))),
        ("io-round-trip", Box::new(io_round_trip)),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
