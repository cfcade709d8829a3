//! CORAL: squared Frobenius distance between sample covariances,
//! `|C_s - C_t|²_F / (4 d²)` with `1/(n-1)` normalized covariances.

use crate::error::Result;
use crate::losses::features::{canonical_rows, check_pair, FeatureBatch};
use crate::tensor::{Function, Tensor, Var};

/// Centered rows (in input order) and the covariance, both reduced in
/// canonical row order.
fn centered_covariance(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let order = canonical_rows(x);
    let mut mean = vec![0.0; d];
    for &i in &order {
        for k in 0..d {
            mean[k] += x.data()[i * d + k];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<f64> = x.data().iter().enumerate().map(|(j, v)| v - mean[j % d]).collect();
    let mut cov = vec![0.0; d * d];
    for &i in &order {
        let r = &centered[i * d..(i + 1) * d];
        for a in 0..d {
            for b in 0..d {
                cov[a * d + b] += r[a] * r[b];
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= (n - 1) as f64);
    (centered, cov)
}

struct Coral;

impl Coral {
    fn diff(s: &Tensor, t: &Tensor) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (cs_centered, cs) = centered_covariance(s);
        let (ct_centered, ct) = centered_covariance(t);
        let diff = cs.iter().zip(&ct).map(|(a, b)| a - b).collect();
        (cs_centered, ct_centered, diff)
    }
}

impl Function for Coral {
    fn name(&self) -> &'static str {
        "coral"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let d = inputs[0].shape()[1] as f64;
        let (_, _, diff) = Self::diff(inputs[0], inputs[1]);
        Ok(Tensor::scalar(diff.iter().map(|v| v * v).sum::<f64>() / (4.0 * d * d)))
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad_out: &Tensor) -> Vec<Option<Tensor>> {
        let (s, t) = (inputs[0], inputs[1]);
        let d = s.shape()[1];
        let (sc, tc, diff) = Self::diff(s, t);
        let g = grad_out.item();
        // dL/dX = ±(X - mean) · D / ((n-1) d²); D symmetric.
        let side = |centered: &[f64], n: usize, sign: f64| {
            let scale = sign * g / ((n - 1) as f64 * (d * d) as f64);
            let mut out = vec![0.0; n * d];
            for i in 0..n {
                for b in 0..d {
                    let mut acc = 0.0;
                    for a in 0..d {
                        acc += centered[i * d + a] * diff[a * d + b];
                    }
                    out[i * d + b] = scale * acc;
                }
            }
            Tensor::new(vec![n, d], out).expect("shape preserved")
        };
        vec![Some(side(&sc, s.shape()[0], 1.0)), Some(side(&tc, t.shape()[0], -1.0))]
    }
}

pub fn coral<'t>(s: &FeatureBatch<'t>, t: &FeatureBatch<'t>) -> Result<Var<'t>> {
    check_pair(s, t, "coral")?;
    s.samples.tape().apply(Box::new(Coral), &[s.samples, t.samples])
}
