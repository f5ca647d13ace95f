//! Mean-field variational inference for the confusion-matrix annotator model.
//!
//! Every instance `i` has a latent true label `z_i ~ Cat(π)`; source `j`
//! reports `y_ij ~ Cat(V_j[z_i, ·])`. Each confusion row and the class prior
//! carry symmetric Dirichlet priors (`alpha` and `beta`). The variational
//! posterior factorizes as `q(Z) q(π) Π_j q(V_j)` and is fitted by coordinate
//! ascent on the evidence lower bound.

mod filter;
mod matrix;
mod supervised;

pub use filter::{spammer_filter, FilteredPosterior};
pub use matrix::{AnnotationMatrix, MISSING};
pub use supervised::{run_supervised, supervised_estimate, Smoothing, SufficientStats};

use ndarray::{Array1, Array2, Array3, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{ln_gamma, psi};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    #[default]
    Token,
    Entity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeaConfig {
    /// Dirichlet concentration of every confusion-matrix row.
    pub alpha: f64,
    /// Dirichlet concentration of the class prior.
    pub beta: f64,
    pub elbo_tol: f64,
    pub max_iter: usize,
    pub granularity: Granularity,
    /// Class left out of mean recall (the `O` label when aggregating tags).
    pub recall_excludes: Option<usize>,
}

impl Default for BeaConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            elbo_tol: 1e-6,
            max_iter: 200,
            granularity: Granularity::Token,
            recall_excludes: None,
        }
    }
}

impl BeaConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.alpha) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !positive(self.beta) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if !positive(self.elbo_tol) {
            return Err(Error::Config(format!("elbo_tol must be positive, got {}", self.elbo_tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Dirichlet posterior of the class prior.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorFactor {
    pub concentration: Array1<f64>,
    /// `E[log π_k]`
    pub elog: Array1<f64>,
}

/// Row-wise Dirichlet posteriors of every source's confusion matrix, `H × K × K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionFactor {
    pub concentration: Array3<f64>,
    /// `E[log V_j[k, l]]`
    pub elog: Array3<f64>,
}

fn dirichlet_elog(concentration: ArrayView1<f64>) -> Array1<f64> {
    let total = psi(concentration.sum());
    concentration.mapv(|c| psi(c) - total)
}

impl PriorFactor {
    pub(crate) fn from_concentration(concentration: Array1<f64>) -> Self {
        let elog = dirichlet_elog(concentration.view());
        Self {
            concentration,
            elog,
        }
    }
}

impl ConfusionFactor {
    pub(crate) fn from_concentration(concentration: Array3<f64>) -> Self {
        let mut elog = Array3::zeros(concentration.raw_dim());
        for (mut out, row) in elog
            .lanes_mut(Axis(2))
            .into_iter()
            .zip(concentration.lanes(Axis(2)))
        {
            out.assign(&dirichlet_elog(row));
        }
        Self {
            concentration,
            elog,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    /// `q(z_i = k)`, one row-stochastic row per instance.
    pub qz: Array2<f64>,
    pub prior: PriorFactor,
    pub confusion: ConfusionFactor,
    pub elbo_trace: Vec<f64>,
}

impl VariationalState {
    /// State with the given responsibilities and both factors at their priors.
    pub fn from_qz(qz: Array2<f64>, num_sources: usize, config: &BeaConfig) -> Self {
        let k = qz.ncols();
        Self {
            qz,
            prior: PriorFactor::from_concentration(Array1::from_elem(k, config.beta)),
            confusion: ConfusionFactor::from_concentration(Array3::from_elem((num_sources, k, k), config.alpha)),
            elbo_trace: Vec::new(),
        }
    }

    pub fn elog_pi(&self) -> &Array1<f64> {
        &self.prior.elog
    }

    pub fn elog_v(&self) -> &Array3<f64> {
        &self.confusion.elog
    }

    pub fn num_classes(&self) -> usize {
        self.prior.elog.len()
    }

    /// Per-source confusion in probability space: `exp(E[log V])`, row-normalized.
    pub fn normalized_confusions(&self) -> Vec<Array2<f64>> {
        self.confusion
            .elog
            .outer_iter()
            .map(|m| {
                let mut m = m.to_owned();
                for mut row in m.outer_iter_mut() {
                    let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    row.mapv_inplace(|v| (v - max).exp());
                    let s = row.sum();
                    row /= s;
                }
                m
            })
            .collect()
    }

    /// Mean of the normalized confusion diagonal over every class except
    /// `excludes`, per source.
    pub fn mean_recall(&self, excludes: Option<usize>) -> Vec<f64> {
        let k = self.num_classes();
        let mut classes: Vec<usize> = (0..k).filter(|&c| Some(c) != excludes).collect();
        if classes.is_empty() {
            classes = (0..k).collect();
        }
        self.normalized_confusions()
            .iter()
            .map(|m| classes.iter().map(|&c| m[[c, c]]).sum::<f64>() / classes.len() as f64)
            .collect()
    }

    pub fn map_labels(&self) -> Vec<usize> {
        self.qz.outer_iter().map(|row| argmax(row)).collect()
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub(crate) fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub state: VariationalState,
    /// `argmax_k q(z_i = k)`
    pub map_labels: Vec<usize>,
    pub mean_recall: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl Posterior {
    pub(crate) fn from_state(
        state: VariationalState,
        config: &BeaConfig,
        iterations: usize,
        converged: bool,
    ) -> Self {
        let map_labels = state.map_labels();
        let mean_recall = state.mean_recall(config.recall_excludes);
        Self {
            state,
            map_labels,
            mean_recall,
            iterations,
            converged,
        }
    }

    /// Sources ordered by decreasing mean recall; ties keep source order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.mean_recall.len()).collect();
        order.sort_by(|&a, &b| self.mean_recall[b].total_cmp(&self.mean_recall[a]).then(a.cmp(&b)));
        order
    }

    /// Posterior mass of the MAP label of instance `i`.
    pub fn map_probability(&self, i: usize) -> f64 {
        self.state.qz[[i, self.map_labels[i]]]
    }
}

/// Majority-vote initialization: `q(z_i = k)` is the fraction of sources on
/// `i` voting `k` (uniform when nothing is observed), followed by one pass of
/// the prior and confusion updates.
pub fn init_state(y: &AnnotationMatrix, config: &BeaConfig) -> VariationalState {
    let k = y.num_classes();
    let mut qz = Array2::zeros((y.num_instances(), k));
    for (i, mut row) in qz.outer_iter_mut().enumerate() {
        let mut n = 0.0;
        for (_, l) in y.observed(i) {
            row[l] += 1.0;
            n += 1.0;
        }
        if n > 0.0 {
            row /= n;
        } else {
            row.fill(1.0 / k as f64);
        }
    }
    let mut state = VariationalState::from_qz(qz, y.num_sources(), config);
    state.prior = update_pi(&state, config);
    state.confusion = update_v(&state, y, config);
    state
}

/// `E[log π_k] = ψ(β + Σ_i q(z_i = k)) − ψ(Kβ + N)`
pub fn update_pi(state: &VariationalState, config: &BeaConfig) -> PriorFactor {
    let concentration = state.qz.sum_axis(Axis(0)) + config.beta;
    PriorFactor::from_concentration(concentration)
}

/// `E[log V_j[k, l]] = ψ(α + Σ_i q(z_i = k) 1[y_ij = l]) − ψ(Kα + Σ_i q(z_i = k))`,
/// summing only over instances that source `j` labelled.
pub fn update_v(state: &VariationalState, y: &AnnotationMatrix, config: &BeaConfig) -> ConfusionFactor {
    let k = state.num_classes();
    let h = y.num_sources();
    let per_source: Vec<Array2<f64>> = (0..h)
        .into_par_iter()
        .map(|j| {
            let mut counts = Array2::from_elem((k, k), config.alpha);
            for i in 0..y.num_instances() {
                if let Some(l) = y.get(i, j) {
                    let q = state.qz.row(i);
                    for c in 0..k {
                        counts[[c, l]] += q[c];
                    }
                }
            }
            counts
        })
        .collect();
    let mut concentration = Array3::zeros((h, k, k));
    for (j, m) in per_source.into_iter().enumerate() {
        concentration.index_axis_mut(Axis(0), j).assign(&m);
    }
    ConfusionFactor::from_concentration(concentration)
}

fn log_weights(state: &VariationalState, y: &AnnotationMatrix, i: usize) -> Array1<f64> {
    let mut w = state.prior.elog.clone();
    for (j, l) in y.observed(i) {
        let ev = state.confusion.elog.index_axis(Axis(0), j);
        for (k, wk) in w.iter_mut().enumerate() {
            *wk += ev[[k, l]];
        }
    }
    w
}

/// `q(z_i = k) ∝ exp(E[log π_k] + Σ_j E[log V_j[k, y_ij]])`, normalized by log-sum-exp.
pub fn update_qz(state: &VariationalState, y: &AnnotationMatrix) -> Array2<f64> {
    let k = state.num_classes();
    let rows: Vec<Array1<f64>> = (0..y.num_instances())
        .into_par_iter()
        .map(|i| {
            let w = log_weights(state, y, i);
            let max = w.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let e = w.mapv(|v| (v - max).exp());
            let s = e.sum();
            e / s
        })
        .collect();
    let mut qz = Array2::zeros((rows.len(), k));
    for (i, r) in rows.into_iter().enumerate() {
        qz.row_mut(i).assign(&r);
    }
    qz
}

/// `KL(Dir(a) || Dir(b))`
fn dirichlet_kl(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let sa = a.sum();
    let sb = b.sum();
    let dsa = psi(sa);
    let mut kl = ln_gamma(sa) - ln_gamma(sb);
    for (&ak, &bk) in a.iter().zip(b) {
        kl += ln_gamma(bk) - ln_gamma(ak) + (ak - bk) * (psi(ak) - dsa);
    }
    kl
}

/// Evidence lower bound of the current state:
/// expected complete-data log likelihood, plus the entropy of `q(Z)`, minus
/// the KL divergences of `q(π)` and every `q(V_j[k, ·])` from their priors.
pub fn elbo(state: &VariationalState, y: &AnnotationMatrix, config: &BeaConfig) -> f64 {
    let k = state.num_classes();
    let per_instance: Vec<f64> = (0..y.num_instances())
        .into_par_iter()
        .map(|i| {
            let w = log_weights(state, y, i);
            state
                .qz
                .row(i)
                .iter()
                .zip(&w)
                .map(|(&q, &wk)| if q > 0.0 { q * (wk - q.ln()) } else { 0.0 })
                .sum()
        })
        .collect();
    let local: f64 = per_instance.iter().sum();

    let prior_beta = Array1::from_elem(k, config.beta);
    let prior_alpha = Array1::from_elem(k, config.alpha);
    let kl_pi = dirichlet_kl(state.prior.concentration.view(), prior_beta.view());
    let kl_v: f64 = state
        .confusion
        .concentration
        .lanes(Axis(2))
        .into_iter()
        .map(|row| dirichlet_kl(row, prior_alpha.view()))
        .sum();
    local - kl_pi - kl_v
}

/// Alternates the prior/confusion updates with the `q(Z)` update until the
/// ELBO changes by less than `elbo_tol`, or `max_iter` cycles have run.
///
/// A single source cannot be told apart from the truth it corrupts; coordinate
/// ascent then drifts from the vote initialization toward a one-class labelling.
/// With one source the initialization is returned as the posterior.
pub fn run_bea(y: &AnnotationMatrix, config: &BeaConfig) -> Result<Posterior> {
    config.validate()?;
    let mut state = init_state(y, config);
    if y.num_sources() == 1 {
        let value = elbo(&state, y, config);
        if !value.is_finite() {
            return Err(Error::Numerical {
                iteration: 0,
                message: format!("ELBO evaluated to {value}"),
            });
        }
        state.elbo_trace.push(value);
        return Ok(Posterior::from_state(state, config, 0, true));
    }
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=config.max_iter {
        if it > 1 {
            state.prior = update_pi(&state, config);
            state.confusion = update_v(&state, y, config);
        }
        state.qz = update_qz(&state, y);
        let value = elbo(&state, y, config);
        iterations = it;
        if !value.is_finite() {
            return Err(Error::Numerical {
                iteration: it,
                message: format!("ELBO evaluated to {value}"),
            });
        }
        let prev = state.elbo_trace.last().copied();
        state.elbo_trace.push(value);
        if prev.is_some_and(|p| (value - p).abs() < config.elbo_tol) {
            converged = true;
            break;
        }
    }
    Ok(Posterior::from_state(state, config, iterations, converged))
}
