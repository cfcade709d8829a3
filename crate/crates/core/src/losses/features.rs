use std::cmp::Ordering;

use crate::error::{contract, Result};
use crate::tensor::{Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

/// n×d matrix of per-sample feature vectors from one domain.
#[derive(Clone, Copy, Debug)]
pub struct FeatureBatch<'t> {
    pub samples: Var<'t>,
    pub domain: Domain,
}

impl<'t> FeatureBatch<'t> {
    pub fn new(samples: Var<'t>, domain: Domain) -> Result<Self> {
        let shape = samples.shape();
        contract!(shape.len() == 2, "feature batch must be n×d, got {shape:?}");
        Ok(FeatureBatch { samples, domain })
    }

    pub fn n(&self) -> usize {
        self.samples.shape()[0]
    }

    pub fn d(&self) -> usize {
        self.samples.shape()[1]
    }
}

/// Global average over H×W: N×Ch×H×W feature map → N×Ch batch.
pub fn pool_features<'t>(f: Var<'t>, domain: Domain) -> Result<FeatureBatch<'t>> {
    FeatureBatch::new(f.global_avg_pool()?, domain)
}

pub(crate) fn check_pair(s: &FeatureBatch<'_>, t: &FeatureBatch<'_>, what: &str) -> Result<()> {
    contract!(
        s.n() >= 2 && t.n() >= 2,
        "{what} needs at least 2 samples per domain, got {} and {}",
        s.n(),
        t.n()
    );
    contract!(s.d() == t.d(), "{what}: feature widths differ ({} vs {})", s.d(), t.d());
    Ok(())
}

/// Row order sorted lexicographically by value; reductions run in this
/// order so that results do not depend on the caller's sample order.
pub(crate) fn canonical_rows(m: &Tensor) -> Vec<usize> {
    let d = m.shape()[1];
    let row = |i: usize| &m.data()[i * d..(i + 1) * d];
    let mut idx: Vec<usize> = (0..m.shape()[0]).collect();
    idx.sort_by(|&a, &b| {
        row(a)
            .iter()
            .zip(row(b))
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    idx
}
