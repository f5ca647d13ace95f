use crate::error::{Error, Result};

/// Sentinel for an unobserved entry in the flat label buffer.
pub const MISSING: u32 = u32::MAX;

/// `N × H` categorical observations in `[0, K)`, with missing entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationMatrix {
    classes: usize,
    sources: usize,
    labels: Vec<u32>,
}

impl AnnotationMatrix {
    pub fn new(classes: usize, sources: usize, rows: Vec<Vec<Option<usize>>>) -> Result<Self> {
        let mut labels = Vec::with_capacity(rows.len() * sources);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != sources {
                return Err(Error::Input(format!(
                    "instance {i} has {} entries, expected {sources}",
                    row.len()
                )));
            }
            for l in row {
                labels.push(match l {
                    Some(l) => Self::check(l, classes)?,
                    None => MISSING,
                });
            }
        }
        Self::from_flat(classes, sources, labels)
    }

    /// Builds from a row-major buffer using [`MISSING`] for absent entries.
    pub fn from_flat(classes: usize, sources: usize, labels: Vec<u32>) -> Result<Self> {
        if classes == 0 {
            return Err(Error::Input("annotation matrix needs at least one class".into()));
        }
        if sources == 0 {
            return Err(Error::Input("annotation matrix needs at least one source".into()));
        }
        if labels.len() % sources != 0 {
            return Err(Error::Input("label buffer is not a whole number of rows".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l != MISSING && l as usize >= classes) {
            return Err(Error::Input(format!("label {bad} outside [0, {classes})")));
        }
        Ok(Self {
            classes,
            sources,
            labels,
        })
    }

    fn check(l: usize, classes: usize) -> Result<u32> {
        if l >= classes {
            return Err(Error::Input(format!("label {l} outside [0, {classes})")));
        }
        Ok(l as u32)
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn num_sources(&self) -> usize {
        self.sources
    }

    pub fn num_instances(&self) -> usize {
        self.labels.len() / self.sources
    }

    pub fn get(&self, i: usize, j: usize) -> Option<usize> {
        match self.labels[i * self.sources + j] {
            MISSING => None,
            l => Some(l as usize),
        }
    }

    /// `(source, label)` for every source that labelled instance `i`.
    pub fn observed(&self, i: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.labels[i * self.sources..(i + 1) * self.sources]
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != MISSING)
            .map(|(j, &l)| (j, l as usize))
    }

    pub fn column(&self, j: usize) -> Vec<Option<usize>> {
        (0..self.num_instances()).map(|i| self.get(i, j)).collect()
    }

    /// Keeps the listed source columns, in the given order.
    pub fn select_sources(&self, keep: &[usize]) -> Result<Self> {
        if let Some(&j) = keep.iter().find(|&&j| j >= self.sources) {
            return Err(Error::Input(format!("source {j} out of range")));
        }
        let labels = (0..self.num_instances())
            .flat_map(|i| keep.iter().map(move |&j| self.labels[i * self.sources + j]))
            .collect();
        Self::from_flat(self.classes, keep.len(), labels)
    }

    /// Applies `map[l]` to every observed label.
    pub fn relabel(&self, map: &[usize]) -> Result<Self> {
        if map.len() != self.classes {
            return Err(Error::LengthMismatch {
                expected: self.classes,
                found: map.len(),
            });
        }
        let labels = self
            .labels
            .iter()
            .map(|&l| if l == MISSING { l } else { map[l as usize] as u32 })
            .collect();
        Self::from_flat(self.classes, self.sources, labels)
    }
}
