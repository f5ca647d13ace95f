#![allow(dead_code)]

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use seqagg::bea::AnnotationMatrix;
use seqagg::corpus::{LabelSet, Layer};

fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// Exact posterior quantities of the Dirichlet-categorical model by summing
/// over every labelling.
pub struct Exact {
    pub log_evidence: f64,
    /// `marginals[i][k]`, restricted to one labelling per label-permutation
    /// orbit: the one agreeing most with `reference`.
    pub marginals: Vec<Vec<f64>>,
}

fn log_joint(y: &AnnotationMatrix, z: &[usize], alpha: f64, beta: f64) -> f64 {
    let k = y.num_classes();
    let kf = k as f64;
    let mut n = vec![0.0; k];
    for &c in z {
        n[c] += 1.0;
    }
    let mut lp = ln_gamma(kf * beta) - ln_gamma(z.len() as f64 + kf * beta);
    for &c in &n {
        lp += ln_gamma(c + beta) - ln_gamma(beta);
    }
    for j in 0..y.num_sources() {
        let mut m = vec![vec![0.0; k]; k];
        for (i, &c) in z.iter().enumerate() {
            if let Some(l) = y.get(i, j) {
                m[c][l] += 1.0;
            }
        }
        for row in &m {
            let total: f64 = row.iter().sum();
            lp += ln_gamma(kf * alpha) - ln_gamma(total + kf * alpha);
            for &c in row {
                lp += ln_gamma(c + alpha) - ln_gamma(alpha);
            }
        }
    }
    lp
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

fn all_labellings(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|z| {
                (0..k).map(move |c| {
                    let mut z = z.clone();
                    z.push(c);
                    z
                })
            })
            .collect();
    }
    out
}

pub fn enumerate_posterior(y: &AnnotationMatrix, alpha: f64, beta: f64, reference: &[usize]) -> Exact {
    let n = y.num_instances();
    let k = y.num_classes();
    let perms = permutations(k);
    let zs = all_labellings(n, k);
    let lps: Vec<f64> = zs.iter().map(|z| log_joint(y, z, alpha, beta)).collect();
    let max = lps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_evidence = max + lps.iter().map(|lp| (lp - max).exp()).sum::<f64>().ln();

    let agreement = |z: &[usize]| z.iter().zip(reference).filter(|(a, b)| a == b).count();
    let mut marginals = vec![vec![0.0; k]; n];
    let mut total = 0.0;
    for (z, lp) in zs.iter().zip(&lps) {
        let rep = perms
            .iter()
            .map(|p| z.iter().map(|&c| p[c]).collect::<Vec<_>>())
            .max_by(|a, b| agreement(a).cmp(&agreement(b)).then_with(|| b.cmp(a)))
            .unwrap();
        if &rep != z {
            continue;
        }
        let w = (lp - max).exp();
        total += w;
        for (i, &c) in z.iter().enumerate() {
            marginals[i][c] += w;
        }
    }
    for row in &mut marginals {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Exact {
        log_evidence,
        marginals,
    }
}

const TYPES: [&str; 4] = ["PER", "ORG", "LOC", "MISC"];

fn random_tags(rng: &mut ChaCha8Rng, len: usize, types: usize, valid: bool) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(len);
    for i in 0..len {
        let t = TYPES[rng.gen_range(0..types)];
        let tag = match rng.gen_range(0..3) {
            0 => "O".to_string(),
            1 => format!("B-{t}"),
            _ if valid => match out.last() {
                Some(prev) if prev != "O" && i > 0 => format!("I-{}", &prev[2..]),
                _ => "O".to_string(),
            },
            _ => format!("I-{t}"),
        };
        out.push(tag);
    }
    out
}

/// Random multi-column CoNLL text. Returns the text, its label set and
/// layers, and whether every layer is valid IOB2.
pub fn random_corpus_text(rng: &mut ChaCha8Rng) -> (String, LabelSet, Vec<Layer>, bool) {
    let types = rng.gen_range(1..=TYPES.len());
    let label_set = LabelSet::new(TYPES[..types].iter().copied()).unwrap();
    let h = rng.gen_range(1..=4);
    let mut layers: Vec<Layer> = (0..h).map(|j| Layer::Source(format!("m{j}"))).collect();
    if rng.gen_bool(0.5) {
        layers.insert(rng.gen_range(0..=h), Layer::Gold);
    }
    let valid = rng.gen_bool(0.7);
    let mut text = String::new();
    for _ in 0..rng.gen_range(0..6) {
        let len = rng.gen_range(1..8);
        let columns: Vec<Option<Vec<String>>> = layers
            .iter()
            .map(|_| {
                if rng.gen_bool(0.1) {
                    None
                } else {
                    Some(random_tags(rng, len, types, valid))
                }
            })
            .collect();
        for t in 0..len {
            let word: String = (0..rng.gen_range(1..6))
                .map(|_| *b"abcXYZ019.,-'".choose(rng).unwrap() as char)
                .collect();
            text.push_str(&word);
            for col in &columns {
                text.push(' ');
                text.push_str(col.as_ref().map_or("_", |c| &c[t]));
            }
            text.push('\n');
        }
        text.push('\n');
    }
    (text, label_set, layers, valid)
}
