//! Total training objectives.
//!
//! Encoder alignment: `L = L_s(ŷ_s, y_s) + Σ_i λ_i L_d(f_i^s, f_i^t)` over the
//! aligned encoder levels, with non-decreasing `λ_i`.
//!
//! Y-Net: `L = L_s(ŷ_s, y_s) + λ_r^s L_r(x̂_s, x_s) + λ_r^t L_r(x̂_t, x_t)`
//! with `L_r` the mean squared error.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::losses::coral::coral;
use crate::losses::dann::dann_loss;
use crate::losses::features::{pool_features, Domain, FeatureBatch};
use crate::losses::mmd::{mmd2_with_policy, BandwidthPolicy};
use crate::nn::{Bound, DomainClassifier};
use crate::tensor::Var;

/// Domain-adaptation method. `None` is the source-only / finetuning baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[serde(rename = "ft")]
    None,
    Mmd,
    Coral,
    Dann,
    Ynet,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::None, Method::Mmd, Method::Coral, Method::Dann, Method::Ynet];

    /// Lower-case CLI name.
    pub fn cli_name(self) -> &'static str {
        match self {
            Method::None => "ft",
            Method::Mmd => "mmd",
            Method::Coral => "coral",
            Method::Dann => "dann",
            Method::Ynet => "ynet",
        }
    }

    /// Row label used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            Method::None => "FT",
            Method::Mmd => "MMD",
            Method::Coral => "CORAL",
            Method::Dann => "DANN",
            Method::Ynet => "Y-NET",
        }
    }

    /// Whether the method adds a per-level encoder discrepancy term.
    pub fn aligns_features(self) -> bool {
        matches!(self, Method::Mmd | Method::Coral | Method::Dann)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.cli_name() == s.to_ascii_lowercase() || m.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}; valid: ft, mmd, coral, dann, ynet")))
    }
}

/// Which discrepancy is applied at which encoder levels, and how strongly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignmentSpec {
    pub method: Method,
    /// Aligned encoder levels (1-based, ascending).
    pub levels: Vec<usize>,
    /// λ per entry of `levels`.
    pub lambdas: Vec<f64>,
    /// Require strictly increasing λ instead of non-decreasing.
    pub strictly_increasing: bool,
    pub bandwidths: BandwidthPolicy,
    pub grl_lambda: f64,
    pub recon_source: f64,
    pub recon_target: f64,
}

impl AlignmentSpec {
    pub fn none() -> Self {
        AlignmentSpec {
            method: Method::None,
            levels: vec![],
            lambdas: vec![],
            strictly_increasing: false,
            bandwidths: BandwidthPolicy::default(),
            grl_lambda: 1.0,
            recon_source: 0.0,
            recon_target: 0.0,
        }
    }

    /// Encoder alignment on `levels` with the doubling schedule
    /// `λ_i = λ_0 · 2^(i-1)`.
    pub fn encoder_alignment(method: Method, levels: &[usize], lambda0: f64) -> Self {
        AlignmentSpec {
            method,
            levels: levels.to_vec(),
            lambdas: levels.iter().map(|&i| lambda0 * (1u64 << (i - 1)) as f64).collect(),
            ..Self::none()
        }
    }

    pub fn ynet(recon_source: f64, recon_target: f64) -> Self {
        AlignmentSpec { method: Method::Ynet, recon_source, recon_target, ..Self::none() }
    }

    /// Checks these settings against a network of depth `depth`.
    pub fn validate(&self, depth: usize) -> Result<()> {
        match self.method {
            Method::None => Ok(()),
            Method::Ynet => {
                contract!(
                    self.recon_source >= 0.0 && self.recon_target >= 0.0,
                    "reconstruction weights must be >= 0"
                );
                Ok(())
            }
            _ => {
                contract!(!self.levels.is_empty(), "{} alignment needs at least one level", self.method);
                contract!(
                    self.levels.len() == self.lambdas.len(),
                    "{} levels but {} lambdas",
                    self.levels.len(),
                    self.lambdas.len()
                );
                contract!(
                    self.levels.iter().all(|&l| (1..=depth).contains(&l)),
                    "levels {:?} outside 1..={depth}",
                    self.levels
                );
                contract!(
                    self.levels.windows(2).all(|w| w[0] < w[1]),
                    "levels must be ascending and unique: {:?}",
                    self.levels
                );
                contract!(self.lambdas.iter().all(|&l| l >= 0.0 && l.is_finite()), "lambdas must be >= 0");
                let ok = self.lambdas.windows(2).all(|w| if self.strictly_increasing { w[0] < w[1] } else { w[0] <= w[1] });
                contract!(
                    ok,
                    "lambdas must be {} in the level index: {:?}",
                    if self.strictly_increasing { "strictly increasing" } else { "non-decreasing" },
                    self.lambdas
                );
                contract!(self.grl_lambda >= 0.0, "grl lambda must be >= 0");
                self.bandwidths.validate()
            }
        }
    }
}

/// A per-level discrepancy between pooled source and target features.
pub trait Discrepancy<'t> {
    fn name(&self) -> &str;
    fn term(&self, level: usize, s: &FeatureBatch<'t>, t: &FeatureBatch<'t>) -> Result<Var<'t>>;
}

/// The discrepancy selected by an [`AlignmentSpec`]; DANN needs its bound
/// per-level classifiers.
pub struct SpecDiscrepancy<'a, 't> {
    pub spec: &'a AlignmentSpec,
    pub classifiers: &'a [(DomainClassifier, Bound<'t>)],
}

impl<'t> Discrepancy<'t> for SpecDiscrepancy<'_, 't> {
    fn name(&self) -> &str {
        self.spec.method.cli_name()
    }

    fn term(&self, level: usize, s: &FeatureBatch<'t>, t: &FeatureBatch<'t>) -> Result<Var<'t>> {
        match self.spec.method {
            Method::Mmd => mmd2_with_policy(s, t, &self.spec.bandwidths),
            Method::Coral => coral(s, t),
            Method::Dann => {
                let (clf, bound) = self
                    .classifiers
                    .iter()
                    .find(|(c, _)| c.level() == level)
                    .ok_or_else(|| Error::Contract(format!("no domain classifier for level {level}")))?;
                dann_loss(s, t, clf, bound, self.spec.grl_lambda)
            }
            m => Err(Error::Contract(format!("{m} has no feature discrepancy"))),
        }
    }
}

/// One weighted component of a total loss.
#[derive(Clone, Copy, Debug)]
pub struct LossTerm<'t> {
    pub level: Option<usize>,
    pub raw: Var<'t>,
    pub weight: f64,
    pub weighted: Var<'t>,
}

/// A total loss with its decomposition: `total = segmentation + Σ weighted`,
/// summed left to right.
#[derive(Debug)]
pub struct LossBreakdown<'t> {
    pub total: Var<'t>,
    pub segmentation: Var<'t>,
    pub terms: Vec<(String, LossTerm<'t>)>,
}

impl LossBreakdown<'_> {
    /// `(name, value)` pairs: segmentation first, then every weighted term.
    pub fn components(&self) -> Vec<(String, f64)> {
        let mut out = vec![("seg".to_string(), self.segmentation.item())];
        out.extend(self.terms.iter().map(|(n, t)| (n.clone(), t.weighted.item())));
        out
    }
}

pub fn segmentation_loss<'t>(logits: Var<'t>, labels: &[usize]) -> Result<Var<'t>> {
    logits.softmax_cross_entropy(labels)
}

fn weighted_sum<'t>(segmentation: Var<'t>, terms: Vec<(String, LossTerm<'t>)>) -> Result<LossBreakdown<'t>> {
    let mut total = segmentation;
    for (_, t) in &terms {
        total = total.add(t.weighted)?;
    }
    Ok(LossBreakdown { total, segmentation, terms })
}

/// Segmentation loss on source plus the weighted per-level discrepancies
/// between pooled source and target encoder features.
pub fn alignment_total_loss<'t>(
    logits_s: Var<'t>,
    labels_s: &[usize],
    enc_s: &[Var<'t>],
    enc_t: &[Var<'t>],
    spec: &AlignmentSpec,
    discrepancy: &dyn Discrepancy<'t>,
) -> Result<LossBreakdown<'t>> {
    let seg = segmentation_loss(logits_s, labels_s)?;
    if spec.method == Method::None {
        return weighted_sum(seg, vec![]);
    }
    contract!(
        !spec.levels.is_empty(),
        "alignment with method {} needs at least one level",
        spec.method
    );
    contract!(spec.levels.len() == spec.lambdas.len(), "levels and lambdas differ in length");
    let mut terms = Vec::with_capacity(spec.levels.len());
    for (&level, &lambda) in spec.levels.iter().zip(&spec.lambdas) {
        contract!(
            level >= 1 && level <= enc_s.len() && level <= enc_t.len(),
            "aligned level {level} not available (have {} source / {} target levels)",
            enc_s.len(),
            enc_t.len()
        );
        let s = pool_features(enc_s[level - 1], Domain::Source)?;
        let t = pool_features(enc_t[level - 1], Domain::Target)?;
        contract!(s.d() == t.d(), "level {level}: feature widths differ ({} vs {})", s.d(), t.d());
        let raw = discrepancy.term(level, &s, &t)?;
        let weighted = raw.scale(lambda)?;
        terms.push((
            format!("{}_l{level}", discrepancy.name()),
            LossTerm { level: Some(level), raw, weight: lambda, weighted },
        ));
    }
    weighted_sum(seg, terms)
}

/// Y-Net objective: source segmentation plus weighted reconstruction errors
/// on both domains.
#[allow(clippy::too_many_arguments)]
pub fn ynet_total_loss<'t>(
    logits_s: Var<'t>,
    labels_s: &[usize],
    recon_s: Var<'t>,
    x_s: Var<'t>,
    recon_t: Var<'t>,
    x_t: Var<'t>,
    lambda_source: f64,
    lambda_target: f64,
) -> Result<LossBreakdown<'t>> {
    contract!(
        lambda_source >= 0.0 && lambda_target >= 0.0,
        "reconstruction weights must be >= 0"
    );
    let seg = segmentation_loss(logits_s, labels_s)?;
    let rs = recon_s.mse(x_s)?;
    let rt = recon_t.mse(x_t)?;
    let terms = vec![
        (
            "recon_source".to_string(),
            LossTerm { level: None, raw: rs, weight: lambda_source, weighted: rs.scale(lambda_source)? },
        ),
        (
            "recon_target".to_string(),
            LossTerm { level: None, raw: rt, weight: lambda_target, weighted: rt.scale(lambda_target)? },
        ),
    ];
    weighted_sum(seg, terms)
}
