//! Synthetic annotation problems drawn from the generative model, with known
//! truth, for testing recovery.

use ndarray::Array2;
use pathfinding::prelude::{kuhn_munkres, Matrix};
use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};

use crate::bea::{AnnotationMatrix, Posterior};
use crate::corpus::{Corpus, LabelSet, Sentence, Tag};
use crate::error::{Error, Result};
use crate::metrics::token_accuracy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PriorSpec {
    Fixed(Vec<f64>),
    /// Draw π from a symmetric Dirichlet with this concentration.
    Dirichlet(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SourceSpec {
    /// Correct with probability `diag`, otherwise uniform over the other labels.
    Reliable(f64),
    /// Uniform over all labels regardless of the truth.
    Spammer,
    /// A reliable source whose output labels are renamed: truth `k` is
    /// reported as `permutation[k]` with probability `diag`.
    Adversary { diag: f64, permutation: Vec<usize> },
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub instances: usize,
    pub classes: usize,
    pub prior: PriorSpec,
    pub sources: Vec<SourceSpec>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthProblem {
    pub y: AnnotationMatrix,
    pub z_true: Vec<usize>,
    pub v_true: Vec<Array2<f64>>,
    pub pi_true: Vec<f64>,
}

fn reliable(k: usize, diag: f64) -> Result<Array2<f64>> {
    if !(0.0..=1.0).contains(&diag) {
        return Err(Error::Config(format!("diagonal {diag} outside [0, 1]")));
    }
    if k == 1 {
        return Ok(Array2::ones((1, 1)));
    }
    let off = (1.0 - diag) / (k - 1) as f64;
    Ok(Array2::from_shape_fn((k, k), |(a, b)| if a == b { diag } else { off }))
}

fn check_simplex(v: &[f64], what: &str) -> Result<()> {
    let s: f64 = v.iter().sum();
    if v.iter().any(|&p| !(p >= 0.0 && p.is_finite())) || (s - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("{what} is not a probability vector")));
    }
    Ok(())
}

impl SourceSpec {
    pub fn matrix(&self, k: usize) -> Result<Array2<f64>> {
        let m = match self {
            SourceSpec::Reliable(d) => reliable(k, *d)?,
            SourceSpec::Spammer => Array2::from_elem((k, k), 1.0 / k as f64),
            SourceSpec::Adversary { diag, permutation } => {
                let mut sorted = permutation.clone();
                sorted.sort_unstable();
                if sorted != (0..k).collect::<Vec<_>>() {
                    return Err(Error::Config("adversary permutation is not a permutation of the classes".into()));
                }
                let base = reliable(k, *diag)?;
                let mut m = Array2::zeros((k, k));
                for a in 0..k {
                    for b in 0..k {
                        m[[a, permutation[b]]] = base[[a, b]];
                    }
                }
                m
            }
            SourceSpec::Matrix(rows) => {
                if rows.len() != k || rows.iter().any(|r| r.len() != k) {
                    return Err(Error::Config(format!("confusion matrix must be {k}×{k}")));
                }
                Array2::from_shape_fn((k, k), |(a, b)| rows[a][b])
            }
        };
        for row in m.outer_iter() {
            check_simplex(row.as_slice().unwrap_or(&row.to_vec()), "confusion row")?;
        }
        Ok(m)
    }
}

/// Draws `z_i ~ Cat(π)` and `y_ij ~ Cat(V_j[z_i, ·])`, deterministically in the seed.
pub fn generate(config: &SynthConfig) -> Result<SynthProblem> {
    let k = config.classes;
    if k == 0 {
        return Err(Error::Config("need at least one class".into()));
    }
    if config.sources.is_empty() {
        return Err(Error::Config("need at least one source".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pi_true = match &config.prior {
        PriorSpec::Fixed(p) => {
            if p.len() != k {
                return Err(Error::Config(format!("prior has {} entries, expected {k}", p.len())));
            }
            check_simplex(p, "prior")?;
            p.clone()
        }
        PriorSpec::Dirichlet(beta) => {
            let g = Gamma::new(*beta, 1.0)
                .map_err(|e| Error::Config(format!("Dirichlet concentration: {e}")))?;
            let draws: Vec<f64> = (0..k).map(|_| g.sample(&mut rng)).collect();
            let s: f64 = draws.iter().sum();
            draws.into_iter().map(|d| d / s).collect()
        }
    };
    let v_true: Vec<Array2<f64>> = config
        .sources
        .iter()
        .map(|s| s.matrix(k))
        .collect::<Result<_>>()?;

    let weighted = |w: Vec<f64>| {
        WeightedIndex::new(w).map_err(|e| Error::Config(format!("categorical weights: {e}")))
    };
    let prior = weighted(pi_true.clone())?;
    let rows: Vec<Vec<WeightedIndex<f64>>> = v_true
        .iter()
        .map(|m| m.outer_iter().map(|r| weighted(r.to_vec())).collect())
        .collect::<Result<_>>()?;

    let h = config.sources.len();
    let mut z_true = Vec::with_capacity(config.instances);
    let mut labels = Vec::with_capacity(config.instances * h);
    for _ in 0..config.instances {
        let z = prior.sample(&mut rng);
        z_true.push(z);
        for source in &rows {
            labels.push(source[z].sample(&mut rng) as u32);
        }
    }
    Ok(SynthProblem {
        y: AnnotationMatrix::from_flat(k, h, labels)?,
        z_true,
        v_true,
        pi_true,
    })
}

/// Confusion counts of source `j` against the truth, row-normalized
/// (rows with no instances stay zero).
pub fn empirical_confusion(y: &AnnotationMatrix, z: &[usize], j: usize) -> Array2<f64> {
    let k = y.num_classes();
    let mut m = Array2::<f64>::zeros((k, k));
    for (i, &zi) in z.iter().enumerate() {
        if let Some(l) = y.get(i, j) {
            m[[zi, l]] += 1.0;
        }
    }
    for mut row in m.outer_iter_mut() {
        let s = row.sum();
        if s > 0.0 {
            row /= s;
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    pub accuracy: f64,
    /// Mean absolute difference between aligned estimated and true confusion entries, per source.
    pub confusion_l1: Vec<f64>,
    /// `permutation[estimated] = true` label alignment.
    pub permutation: Vec<usize>,
}

/// Label permutation maximizing agreement between `labels` and `truth`.
pub fn align_labels(labels: &[usize], truth: &[usize], k: usize) -> Vec<usize> {
    let mut counts = Matrix::new(k, k, 0i64);
    for (&a, &b) in labels.iter().zip(truth) {
        counts[(a, b)] += 1;
    }
    kuhn_munkres(&counts).1
}

pub fn recovery_error(posterior: &Posterior, problem: &SynthProblem) -> Result<Recovery> {
    let k = problem.y.num_classes();
    let h = problem.v_true.len();
    if posterior.map_labels.len() != problem.z_true.len()
        || posterior.mean_recall.len() != h
        || posterior.state.num_classes() != k
    {
        return Err(Error::Input("posterior and problem shapes differ".into()));
    }
    let perm = align_labels(&posterior.map_labels, &problem.z_true, k);
    let aligned: Vec<usize> = posterior.map_labels.iter().map(|&l| perm[l]).collect();
    let accuracy = token_accuracy(&aligned, &problem.z_true)?;
    let confusion_l1 = posterior
        .state
        .normalized_confusions()
        .iter()
        .zip(&problem.v_true)
        .map(|(est, truth)| {
            let mut total = 0.0;
            for a in 0..k {
                for b in 0..k {
                    total += (est[[a, b]] - truth[[perm[a], perm[b]]]).abs();
                }
            }
            total / (k * k) as f64
        })
        .collect();
    Ok(Recovery {
        accuracy,
        confusion_l1,
        permutation: perm,
    })
}

/// How a synthetic problem is laid out as a tagged corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusLayout {
    pub sentence_len: usize,
    /// Distinct token strings per true class; token `t{z·V + u}` has class `z`.
    pub vocab_per_class: usize,
    pub seed: u64,
}

impl Default for CorpusLayout {
    fn default() -> Self {
        Self {
            sentence_len: 10,
            vocab_per_class: 20,
            seed: 0,
        }
    }
}

/// Label set for `k` synthetic classes: class 0 is `O`, class `c` is the
/// single-token entity `B-T{c}`.
pub fn synthetic_label_set(k: usize) -> LabelSet {
    LabelSet::new((1..k).map(|c| format!("T{c}"))).expect("distinct generated names")
}

fn class_tag(c: usize) -> Tag {
    if c == 0 {
        Tag::O
    } else {
        Tag::B(c - 1)
    }
}

/// Lays the instances out as consecutive sentences. Sources become layers
/// `s1..sH`; the truth becomes the gold layer.
pub fn to_corpus(problem: &SynthProblem, layout: &CorpusLayout) -> Result<Corpus> {
    if layout.sentence_len == 0 || layout.vocab_per_class == 0 {
        return Err(Error::Config("sentence length and vocabulary size must be positive".into()));
    }
    let k = problem.y.num_classes();
    let h = problem.y.num_sources();
    let mut rng = ChaCha8Rng::seed_from_u64(layout.seed);
    let words = rand::distributions::Uniform::new(0, layout.vocab_per_class);
    let n = problem.z_true.len();
    let mut sentences = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + layout.sentence_len).min(n);
        let tokens = (start..end)
            .map(|i| format!("t{}", problem.z_true[i] * layout.vocab_per_class + words.sample(&mut rng)))
            .collect();
        let sources = (0..h)
            .map(|j| {
                (start..end)
                    .map(|i| problem.y.get(i, j).map(class_tag))
                    .collect::<Option<Vec<_>>>()
            })
            .collect();
        let gold = (start..end).map(|i| class_tag(problem.z_true[i])).collect();
        sentences.push(Sentence {
            tokens,
            sources,
            gold: Some(gold),
            aggregate: None,
        });
        start = end;
    }
    let ids = (1..=h).map(|j| format!("s{j}")).collect();
    Corpus::new(synthetic_label_set(k), ids, sentences)
}
