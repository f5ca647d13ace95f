//! Closed-form parameter posteriors from a small gold-labelled set.

use ndarray::{Array1, Array2, Array3, Axis};

use super::{
    update_qz, AnnotationMatrix, BeaConfig, ConfusionFactor, Posterior, PriorFactor,
    VariationalState,
};
use crate::error::{Error, Result};

/// Gold class counts `n_k` and per-source confusion counts `n_jkl`.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub class_counts: Array1<f64>,
    pub confusion_counts: Array3<f64>,
}

impl SufficientStats {
    pub fn new(class_counts: Array1<f64>, confusion_counts: Array3<f64>) -> Result<Self> {
        let k = class_counts.len();
        let (_, k1, k2) = confusion_counts.dim();
        if k1 != k || k2 != k {
            return Err(Error::Input(format!(
                "confusion counts are {k1}×{k2}, expected {k}×{k}"
            )));
        }
        let bad = |v: &f64| !(v.is_finite() && *v >= 0.0);
        if class_counts.iter().any(bad) || confusion_counts.iter().any(bad) {
            return Err(Error::Input("counts must be finite and non-negative".into()));
        }
        let row_totals = confusion_counts.sum_axis(Axis(2));
        for row in row_totals.outer_iter() {
            if row.iter().zip(&class_counts).any(|(&r, &n)| r > n) {
                return Err(Error::Input(
                    "a source labelled more instances of a class than the gold set holds".into(),
                ));
            }
        }
        Ok(Self {
            class_counts,
            confusion_counts,
        })
    }

    /// Counts gold labels and every source's label on each gold instance.
    pub fn from_gold(y: &AnnotationMatrix, gold: &[usize]) -> Result<Self> {
        if gold.len() != y.num_instances() {
            return Err(Error::LengthMismatch {
                expected: y.num_instances(),
                found: gold.len(),
            });
        }
        let k = y.num_classes();
        let mut n_k = Array1::zeros(k);
        let mut n_jkl = Array3::zeros((y.num_sources(), k, k));
        for (i, &z) in gold.iter().enumerate() {
            if z >= k {
                return Err(Error::Input(format!("gold label {z} outside [0, {k})")));
            }
            n_k[z] += 1.0;
            for (j, l) in y.observed(i) {
                n_jkl[[j, z, l]] += 1.0;
            }
        }
        Self::new(n_k, n_jkl)
    }

    pub fn total(&self) -> f64 {
        self.class_counts.sum()
    }

    pub fn num_sources(&self) -> usize {
        self.confusion_counts.dim().0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Smoothing {
    /// Add `beta` / `alpha` pseudo-counts, so empty cells fall back to the prior.
    #[default]
    Prior,
    /// Raw counts; every count must be positive.
    None,
}

/// `E[log π_k] = ψ(n_k + β) − ψ(N + Kβ)` and
/// `E[log V_j[k, l]] = ψ(n_jkl + α) − ψ(Σ_l n_jkl + Kα)`.
/// With [`Smoothing::None`] the pseudo-counts are dropped.
pub fn supervised_estimate(
    stats: &SufficientStats,
    config: &BeaConfig,
    smoothing: Smoothing,
) -> Result<(PriorFactor, ConfusionFactor)> {
    let (beta, alpha) = match smoothing {
        Smoothing::Prior => {
            config.validate()?;
            (config.beta, config.alpha)
        }
        Smoothing::None => (0.0, 0.0),
    };
    let pi = &stats.class_counts + beta;
    let v = &stats.confusion_counts + alpha;
    if let Some(&c) = pi.iter().chain(v.iter()).find(|&&c| c <= 0.0) {
        return Err(Error::Domain {
            function: "digamma",
            value: c,
        });
    }
    Ok((
        PriorFactor::from_concentration(pi),
        ConfusionFactor::from_concentration(v),
    ))
}

/// Freezes the supervised estimates and computes `q(Z)` on unlabelled data
/// with a single `q(Z)` update.
pub fn run_supervised(
    y: &AnnotationMatrix,
    stats: &SufficientStats,
    config: &BeaConfig,
    smoothing: Smoothing,
) -> Result<Posterior> {
    if stats.num_sources() != y.num_sources() || stats.class_counts.len() != y.num_classes() {
        return Err(Error::Input(
            "gold statistics do not match the annotation matrix shape".into(),
        ));
    }
    let (prior, confusion) = supervised_estimate(stats, config, smoothing)?;
    let mut state = VariationalState {
        qz: Array2::zeros((y.num_instances(), y.num_classes())),
        prior,
        confusion,
        elbo_trace: Vec::new(),
    };
    state.qz = update_qz(&state, y);
    Ok(Posterior::from_state(state, config, 1, true))
}
