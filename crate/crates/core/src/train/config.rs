use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::losses::{AlignmentSpec, Method};
use crate::nn::{UNetConfig, DEFAULT_HIDDEN};
use crate::rng::hex_digest;
use crate::train::adam::AdamConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub alignment: AlignmentSpec,
    pub optimizer: AdamConfig,
    pub steps: usize,
    /// Patches per domain per step.
    pub batch_size: usize,
    /// Patch `[H, W]`.
    pub patch: [usize; 2],
    pub augment: bool,
    pub seed: u64,
    /// Write a checkpoint every this many steps; 0 disables.
    pub checkpoint_every: usize,
    pub classifier_hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alignment: AlignmentSpec::none(),
            optimizer: AdamConfig::default(),
            steps: 1000,
            batch_size: 8,
            patch: [64, 64],
            augment: true,
            seed: 0,
            checkpoint_every: 0,
            classifier_hidden: DEFAULT_HIDDEN,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, net: &UNetConfig) -> Result<()> {
        self.optimizer.validate()?;
        self.alignment.validate(net.levels)?;
        let m = net.spatial_multiple();
        contract!(
            self.patch.iter().all(|&p| p >= m && p % m == 0),
            "patch {:?} must be a positive multiple of {m} for depth {}",
            self.patch,
            net.levels
        );
        contract!(self.batch_size >= 1, "batch size must be >= 1");
        if self.alignment.method.aligns_features() {
            contract!(
                self.batch_size >= 2,
                "{} needs at least 2 patches per domain, got batch size {}",
                self.alignment.method,
                self.batch_size
            );
        }
        if self.alignment.method == Method::Dann {
            contract!(self.classifier_hidden >= 1, "classifier hidden width must be >= 1");
        }
        Ok(())
    }

    /// Digest of the canonical JSON form.
    pub fn digest(&self) -> String {
        hex_digest(&serde_json::to_vec(self).expect("config serializes"))
    }
}
