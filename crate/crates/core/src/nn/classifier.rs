use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Result};
use crate::nn::init::he_normal;
use crate::nn::params::{Bound, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

/// Default hidden width of a domain classifier.
pub const DEFAULT_HIDDEN: usize = 64;

/// Per-level DANN domain classifier: global average pool, FC, relu, FC to a
/// single domain logit.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainClassifier {
    level: usize,
    in_channels: usize,
    hidden: usize,
    params: ParamStore,
}

impl DomainClassifier {
    pub fn new(level: usize, in_channels: usize, hidden: usize, seed: u64) -> Result<Self> {
        contract!(in_channels >= 1 && hidden >= 1, "classifier widths must be >= 1");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let prefix = Self::prefix_for(level);
        params.insert(format!("{prefix}fc1.w"), he_normal(&[hidden, in_channels], in_channels, &mut rng))?;
        params.insert(format!("{prefix}fc1.b"), Tensor::zeros(&[hidden]))?;
        params.insert(format!("{prefix}fc2.w"), he_normal(&[1, hidden], hidden, &mut rng))?;
        params.insert(format!("{prefix}fc2.b"), Tensor::zeros(&[1]))?;
        Ok(DomainClassifier { level, in_channels, hidden, params })
    }

    /// Rebuilds a classifier from stored parameters.
    pub fn from_params(level: usize, params: ParamStore) -> Result<Self> {
        let prefix = Self::prefix_for(level);
        let w1 = params
            .get(&format!("{prefix}fc1.w"))
            .ok_or_else(|| crate::Error::Contract(format!("missing {prefix}fc1.w")))?;
        let (hidden, in_channels) = w1.dims2()?;
        let reference = Self::new(level, in_channels, hidden, 0)?;
        contract!(
            reference.params.names() == params.names()
                && reference.params.iter().zip(params.iter()).all(|((_, a), (_, b))| a.shape() == b.shape()),
            "classifier parameters for level {level} are malformed"
        );
        Ok(DomainClassifier { level, in_channels, hidden, params })
    }

    pub fn prefix_for(level: usize) -> String {
        format!("dann.l{level}.")
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        self.params.bind(tape)
    }

    /// FC → relu → FC on already pooled N×Ch features.
    pub fn forward_pooled<'t>(&self, bound: &Bound<'t>, pooled: Var<'t>) -> Result<Var<'t>> {
        let (_, ch) = pooled.value().dims2()?;
        contract!(
            ch == self.in_channels,
            "domain classifier for level {} expects {} channels, got {ch}",
            self.level,
            self.in_channels
        );
        let p = Self::prefix_for(self.level);
        pooled
            .linear(bound.var(&format!("{p}fc1.w"))?, bound.var(&format!("{p}fc1.b"))?)?
            .relu()?
            .linear(bound.var(&format!("{p}fc2.w"))?, bound.var(&format!("{p}fc2.b"))?)
    }

    /// Domain logits (N×1) for an N×Ch×H×W feature map.
    pub fn forward<'t>(&self, bound: &Bound<'t>, features: Var<'t>) -> Result<Var<'t>> {
        let (_, ch, _, _) = features.value().dims4()?;
        contract!(
            ch == self.in_channels,
            "domain classifier for level {} expects {} channels, got {ch}",
            self.level,
            self.in_channels
        );
        self.forward_pooled(bound, features.global_avg_pool()?)
    }
}
