//! Squared maximum mean discrepancy with a mixture of Gaussian kernels.
//!
//! Biased (V-statistic) estimator:
//! `mean k(s,s') + mean k(t,t') - 2 mean k(s,t)` with
//! `k(a,b) = mean_σ exp(-|a-b|² / 2σ²)`.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::losses::features::{canonical_rows, check_pair, FeatureBatch};
use crate::tensor::{Function, Tensor, Var};

/// How kernel bandwidths are chosen for each call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BandwidthPolicy {
    /// Median pairwise distance of the pooled batch times each multiplier,
    /// floored at `floor`.
    Median { multipliers: Vec<f64>, floor: f64 },
    Fixed(Vec<f64>),
}

impl Default for BandwidthPolicy {
    fn default() -> Self {
        BandwidthPolicy::Median { multipliers: vec![0.5, 1.0, 2.0], floor: 1e-3 }
    }
}

impl BandwidthPolicy {
    pub fn validate(&self) -> Result<()> {
        let list = match self {
            BandwidthPolicy::Median { multipliers, floor } => {
                contract!(*floor > 0.0, "bandwidth floor must be > 0");
                multipliers
            }
            BandwidthPolicy::Fixed(b) => b,
        };
        contract!(!list.is_empty(), "bandwidth list is empty");
        contract!(list.iter().all(|&b| b > 0.0 && b.is_finite()), "bandwidths must be positive");
        Ok(())
    }

    /// Bandwidths for a given pair of batches. Treated as constants: no
    /// gradient flows through the median.
    pub fn bandwidths(&self, s: &Tensor, t: &Tensor) -> Vec<f64> {
        match self {
            BandwidthPolicy::Fixed(b) => b.clone(),
            BandwidthPolicy::Median { multipliers, floor } => {
                let m = median_pairwise_distance(s, t);
                multipliers.iter().map(|k| (k * m).max(*floor)).collect()
            }
        }
    }
}

/// Median Euclidean distance over all distinct pairs of the union of rows.
pub fn median_pairwise_distance(s: &Tensor, t: &Tensor) -> f64 {
    let d = s.shape()[1];
    let rows: Vec<&[f64]> = s.data().chunks(d).chain(t.data().chunks(d)).collect();
    let mut dists = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            dists.push(sq_dist(rows[i], rows[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return 0.0;
    }
    dists.sort_by(f64::total_cmp);
    let k = dists.len();
    if k % 2 == 1 {
        dists[k / 2]
    } else {
        0.5 * (dists[k / 2 - 1] + dists[k / 2])
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

struct Mmd2 {
    bandwidths: Vec<f64>,
}

impl Mmd2 {
    fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2 = sq_dist(a, b);
        self.bandwidths.iter().map(|s| (-d2 / (2.0 * s * s)).exp()).sum::<f64>() / self.bandwidths.len() as f64
    }

    /// `∂k(a,b)/∂a`, accumulated into `out` with factor `scale`.
    fn kernel_grad(&self, a: &[f64], b: &[f64], scale: f64, out: &mut [f64]) {
        let d2 = sq_dist(a, b);
        let nb = self.bandwidths.len() as f64;
        let coef: f64 =
            self.bandwidths.iter().map(|s| -(-d2 / (2.0 * s * s)).exp() / (s * s)).sum::<f64>() / nb;
        for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
            *o += scale * coef * (x - y);
        }
    }

    /// Mean kernel value over all (i, j) pairs, visiting rows in canonical order.
    fn mean_kernel(&self, a: &Tensor, ia: &[usize], b: &Tensor, ib: &[usize]) -> f64 {
        let d = a.shape()[1];
        let mut acc = 0.0;
        for &i in ia {
            for &j in ib {
                acc += self.kernel(&a.data()[i * d..(i + 1) * d], &b.data()[j * d..(j + 1) * d]);
            }
        }
        acc / (ia.len() * ib.len()) as f64
    }

    fn side_grad(&self, x: &Tensor, y: &Tensor, g: f64) -> Tensor {
        let (n, d) = (x.shape()[0], x.shape()[1]);
        let m = y.shape()[0];
        let row = |t: &Tensor, i: usize| t.data()[i * d..(i + 1) * d].to_vec();
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let xi = row(x, i);
            let o = &mut out[i * d..(i + 1) * d];
            for j in 0..n {
                if j != i {
                    self.kernel_grad(&xi, &row(x, j), 2.0 * g / (n * n) as f64, o);
                }
            }
            for j in 0..m {
                self.kernel_grad(&xi, &row(y, j), -2.0 * g / (n * m) as f64, o);
            }
        }
        Tensor::new(vec![n, d], out).expect("shape preserved")
    }
}

impl Function for Mmd2 {
    fn name(&self) -> &'static str {
        "mmd2"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (s, t) = (inputs[0], inputs[1]);
        let (is, it) = (canonical_rows(s), canonical_rows(t));
        let v = self.mean_kernel(s, &is, s, &is) + self.mean_kernel(t, &it, t, &it)
            - 2.0 * self.mean_kernel(s, &is, t, &it);
        Ok(Tensor::scalar(v))
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad_out: &Tensor) -> Vec<Option<Tensor>> {
        let (s, t) = (inputs[0], inputs[1]);
        let g = grad_out.item();
        vec![Some(self.side_grad(s, t, g)), Some(self.side_grad(t, s, g))]
    }
}

/// Squared MMD between two feature batches with explicit bandwidths.
pub fn mmd2<'t>(s: &FeatureBatch<'t>, t: &FeatureBatch<'t>, bandwidths: &[f64]) -> Result<Var<'t>> {
    check_pair(s, t, "mmd2")?;
    contract!(!bandwidths.is_empty(), "mmd2 needs at least one bandwidth");
    contract!(
        bandwidths.iter().all(|&b| b > 0.0 && b.is_finite()),
        "mmd2 bandwidths must be positive and finite: {bandwidths:?}"
    );
    s.samples
        .tape()
        .apply(Box::new(Mmd2 { bandwidths: bandwidths.to_vec() }), &[s.samples, t.samples])
}

/// Squared MMD with bandwidths chosen by `policy`.
pub fn mmd2_with_policy<'t>(s: &FeatureBatch<'t>, t: &FeatureBatch<'t>, policy: &BandwidthPolicy) -> Result<Var<'t>> {
    check_pair(s, t, "mmd2")?;
    let bw = policy.bandwidths(&s.samples.value(), &t.samples.value());
    mmd2(s, t, &bw)
}
