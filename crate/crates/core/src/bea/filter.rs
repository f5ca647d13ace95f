//! Two-pass aggregation: drop low-recall sources, then refit on the rest.

use super::{run_bea, AnnotationMatrix, BeaConfig, Posterior};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FilteredPosterior {
    /// Sources ordered by first-pass mean recall, best first.
    pub ranking: Vec<usize>,
    /// Retained sources in original column order; the refit posterior's
    /// source axis follows this order.
    pub kept: Vec<usize>,
    pub posterior: Posterior,
}

/// Keeps the `k_keep` sources with the highest first-pass mean recall and
/// reruns inference on those columns only.
pub fn spammer_filter(
    first_pass: &Posterior,
    y: &AnnotationMatrix,
    k_keep: usize,
    config: &BeaConfig,
) -> Result<FilteredPosterior> {
    let h = y.num_sources();
    if k_keep == 0 {
        return Err(Error::Config("k_keep must be at least 1".into()));
    }
    if k_keep > h {
        return Err(Error::Config(format!("k_keep = {k_keep} exceeds the {h} sources")));
    }
    if first_pass.mean_recall.len() != h {
        return Err(Error::Input("first-pass posterior does not match the matrix".into()));
    }
    let ranking = first_pass.ranking();
    let mut kept = ranking[..k_keep].to_vec();
    kept.sort_unstable();
    let reduced = y.select_sources(&kept)?;
    let posterior = run_bea(&reduced, config)?;
    Ok(FilteredPosterior {
        ranking,
        kept,
        posterior,
    })
}
