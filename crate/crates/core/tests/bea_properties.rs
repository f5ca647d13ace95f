use ndarray::Axis;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seqagg::bea::{run_bea, AnnotationMatrix, BeaConfig};
use seqagg::synth::{generate, PriorSpec, SourceSpec, SynthConfig};

mod common;
use common::enumerate_posterior;

fn problem(seed: u64, n: usize, k: usize, h: usize, missing: f64) -> AnnotationMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sources = (0..h)
        .map(|_| {
            if rng.gen_bool(0.3) {
                SourceSpec::Spammer
            } else {
                SourceSpec::Reliable(rng.gen_range(0.3..0.95))
            }
        })
        .collect();
    let p = generate(&SynthConfig {
        instances: n,
        classes: k,
        prior: PriorSpec::Dirichlet(1.0),
        sources,
        seed,
    })
    .unwrap();
    let rows = (0..n)
        .map(|i| {
            (0..h)
                .map(|j| if rng.gen_bool(missing) { None } else { p.y.get(i, j) })
                .collect()
        })
        .collect();
    AnnotationMatrix::new(k, h, rows).unwrap()
}

fn config(alpha: f64, beta: f64) -> BeaConfig {
    BeaConfig {
        alpha,
        beta,
        elbo_tol: 1e-9,
        ..BeaConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn elbo_is_monotone_and_rows_normalized(
        seed in any::<u64>(),
        n in 1..120usize,
        k in 2..5usize,
        h in 1..6usize,
        missing in 0.0..0.4f64,
        alpha in 0.3..3.0f64,
        beta in 0.3..3.0f64,
    ) {
        let y = problem(seed, n, k, h, missing);
        let post = run_bea(&y, &config(alpha, beta)).unwrap();
        for w in post.state.elbo_trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-8, "ELBO {} -> {}", w[0], w[1]);
        }
        for row in post.state.qz.axis_iter(Axis(0)) {
            prop_assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn source_order_does_not_matter(seed in any::<u64>(), n in 1..80usize, h in 2..6usize) {
        let y = problem(seed, n, 3, h, 0.1);
        let mut perm: Vec<usize> = (0..h).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let shuffled = y.select_sources(&perm).unwrap();
        let cfg = config(1.0, 1.0);
        let a = run_bea(&y, &cfg).unwrap();
        let b = run_bea(&shuffled, &cfg).unwrap();
        prop_assert_eq!(&a.map_labels, &b.map_labels);
        prop_assert_eq!(a.iterations, b.iterations);
        for (x, z) in a.state.qz.iter().zip(b.state.qz.iter()) {
            prop_assert!((x - z).abs() < 1e-12);
        }
        let (ea, eb) = (a.state.elbo_trace.last().unwrap(), b.state.elbo_trace.last().unwrap());
        prop_assert!((ea - eb).abs() < 1e-12 * ea.abs().max(1.0));
        for (new, &old) in perm.iter().enumerate() {
            let (va, vb) = (a.state.elog_v().index_axis(Axis(0), old), b.state.elog_v().index_axis(Axis(0), new));
            for (x, z) in va.iter().zip(vb.iter()) {
                prop_assert!((x - z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn class_relabelling_is_equivariant(seed in any::<u64>(), n in 1..80usize, h in 1..5usize) {
        let k = 3;
        let y = problem(seed, n, k, h, 0.1);
        let mut sigma: Vec<usize> = (0..k).collect();
        sigma.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 2));
        let relabelled = y.relabel(&sigma).unwrap();
        let cfg = config(1.0, 1.0);
        let a = run_bea(&y, &cfg).unwrap();
        let b = run_bea(&relabelled, &cfg).unwrap();
        for i in 0..n {
            for c in 0..k {
                prop_assert!((a.state.qz[[i, c]] - b.state.qz[[i, sigma[c]]]).abs() < 1e-9);
            }
        }
        let (ea, eb) = (a.state.elbo_trace.last().unwrap(), b.state.elbo_trace.last().unwrap());
        prop_assert!((ea - eb).abs() < 1e-9 * ea.abs().max(1.0));
    }

    #[test]
    fn elbo_bounds_exact_log_evidence(
        seed in any::<u64>(),
        n in 1..=5usize,
        k in 2..=3usize,
        h in 1..=3usize,
        missing in 0.0..0.3f64,
        alpha in 0.5..2.0f64,
        beta in 0.5..2.0f64,
    ) {
        let y = problem(seed, n, k, h, missing);
        let post = run_bea(&y, &config(alpha, beta)).unwrap();
        let exact = enumerate_posterior(&y, alpha, beta, &post.map_labels);
        for &e in &post.state.elbo_trace {
            prop_assert!(e <= exact.log_evidence + 1e-9, "ELBO {} above log evidence {}", e, exact.log_evidence);
        }
    }
}

/// Away from the uniform stationary point (where every q(z) row is flat and
/// the MAP is a tie), confident exact MAP labels are reproduced.
#[test]
fn map_agrees_with_enumeration_when_not_at_uniform_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let cfg = BeaConfig::default();
    let mut compared = 0;
    for _ in 0..400 {
        let sources = (0..2).map(|_| SourceSpec::Reliable(rng.gen_range(0.55..0.95))).collect();
        let y = generate(&SynthConfig {
            instances: 4,
            classes: 2,
            prior: PriorSpec::Dirichlet(1.0),
            sources,
            seed: rng.gen(),
        })
        .unwrap()
        .y;
        let post = run_bea(&y, &cfg).unwrap();
        if post.state.qz.iter().all(|q| (q - 0.5).abs() < 1e-3) {
            continue;
        }
        let exact = enumerate_posterior(&y, 1.0, 1.0, &post.map_labels);
        for (i, m) in exact.marginals.iter().enumerate() {
            if (m[0] - m[1]).abs() > 0.1 {
                compared += 1;
                assert_eq!(post.map_labels[i], usize::from(m[1] > m[0]), "instance {i} of {y:?}");
            }
        }
    }
    assert!(compared > 1000);
}

#[test]
fn uniform_stationary_point_is_reached_from_majority_vote() {
    // Two sources agreeing on half the instances: the flat q(z) is a fixed
    // point of the updates and attracts the majority-vote start.
    let y = AnnotationMatrix::new(
        2,
        2,
        vec![
            vec![Some(1), Some(1)],
            vec![Some(0), Some(0)],
            vec![Some(1), Some(0)],
            vec![Some(0), Some(1)],
        ],
    )
    .unwrap();
    let post = run_bea(&y, &BeaConfig::default()).unwrap();
    assert!(post.state.qz.iter().all(|q| (q - 0.5).abs() < 1e-3));
    assert!((post.state.elbo_trace.last().unwrap() - -7.795646536334593).abs() < 1e-6);
}
