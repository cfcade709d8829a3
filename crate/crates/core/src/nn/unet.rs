//! Encoder-decoder segmentation network with skip connections, plus the
//! optional reconstruction decoder that turns it into a Y-Net.
//!
//! Encoder level `i` (1-based) runs two 3×3 conv+relu blocks at
//! `base_channels · 2^(i-1)` channels; levels are separated by 2×2 max-pools.
//! Its last activation (before pooling) is the level feature `f_i`. Each
//! decoder level `i < D` doubles resolution with a 2×2 transposed conv,
//! concatenates `[f_i, upsampled]` and runs two conv+relu blocks, giving
//! `f_-i`. A 1×1 conv maps `f_-1` to class logits.
//!
//! The reconstruction decoder mirrors the segmentation decoder without skip
//! connections and ends in a linear 1×1 conv back to the input channels.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::nn::init::he_normal;
use crate::nn::params::{Bound, ParamStore};
use crate::tensor::{ConvSpec, Tape, Tensor, Var};

/// Prefix shared by all reconstruction-decoder parameters.
pub const RECON_PREFIX: &str = "recon.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UNetConfig {
    /// Encoder depth D.
    pub levels: usize,
    pub input_channels: usize,
    /// Channels at encoder level 1; doubled per level.
    pub base_channels: usize,
    pub num_classes: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig { levels: 4, input_channels: 1, base_channels: 16, num_classes: 2 }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        contract!(self.levels >= 2, "U-Net needs at least 2 levels, got {}", self.levels);
        contract!(self.input_channels >= 1, "input_channels must be >= 1");
        contract!(self.base_channels >= 1, "base_channels must be >= 1");
        contract!(self.num_classes >= 2, "num_classes must be >= 2, got {}", self.num_classes);
        contract!(self.levels <= 16, "levels {} is unreasonably deep", self.levels);
        Ok(())
    }

    /// Channels at encoder level `level` (1-based).
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << (level - 1)
    }

    /// Spatial extents must be multiples of this.
    pub fn spatial_multiple(&self) -> usize {
        1 << (self.levels - 1)
    }
}

/// Which output heads a forward pass evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Heads {
    pub segmentation: bool,
    pub reconstruction: bool,
}

impl Heads {
    pub const ALL: Heads = Heads { segmentation: true, reconstruction: true };
    pub const SEGMENTATION: Heads = Heads { segmentation: true, reconstruction: false };
    pub const RECONSTRUCTION: Heads = Heads { segmentation: false, reconstruction: true };
    pub const ENCODER: Heads = Heads { segmentation: false, reconstruction: false };
}

/// Everything a forward pass exposes, still attached to the tape.
pub struct ForwardArtifacts<'t> {
    /// N×C×H×W class logits (absent when the segmentation head was skipped).
    pub logits: Option<Var<'t>>,
    /// `f_1 … f_D`, shallow to deep.
    pub encoder_features: Vec<Var<'t>>,
    /// `f_-1 … f_-(D-1)`, shallow to deep.
    pub decoder_features: Vec<Var<'t>>,
    /// N×in×H×W reconstruction (Y-Net only).
    pub reconstruction: Option<Var<'t>>,
}

impl<'t> ForwardArtifacts<'t> {
    pub fn logits(&self) -> Result<Var<'t>> {
        self.logits.ok_or_else(|| Error::Contract("segmentation head was not evaluated".into()))
    }

    pub fn reconstruction(&self) -> Result<Var<'t>> {
        self.reconstruction
            .ok_or_else(|| Error::Contract("reconstruction head was not evaluated".into()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegNet {
    config: UNetConfig,
    params: ParamStore,
    reconstruction: bool,
}

fn add_conv<R: rand::Rng>(
    store: &mut ParamStore,
    name: &str,
    cin: usize,
    cout: usize,
    k: usize,
    rng: &mut R,
) -> Result<()> {
    store.insert(format!("{name}.w"), he_normal(&[cout, cin, k, k], cin * k * k, rng))?;
    store.insert(format!("{name}.b"), Tensor::zeros(&[cout]))
}

fn add_up<R: rand::Rng>(store: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut R) -> Result<()> {
    // Each output pixel of a 2×2/stride-2 transposed conv sees one input pixel.
    store.insert(format!("{name}.w"), he_normal(&[cin, cout, 2, 2], cin, rng))?;
    store.insert(format!("{name}.b"), Tensor::zeros(&[cout]))
}

/// Builds a freshly initialized segmentation network.
pub fn build_unet(config: UNetConfig, seed: u64) -> Result<SegNet> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::new();
    let mut cin = config.input_channels;
    for i in 1..=config.levels {
        let c = config.channels(i);
        add_conv(&mut p, &format!("enc{i}.conv1"), cin, c, 3, &mut rng)?;
        add_conv(&mut p, &format!("enc{i}.conv2"), c, c, 3, &mut rng)?;
        cin = c;
    }
    for i in (1..config.levels).rev() {
        let c = config.channels(i);
        add_up(&mut p, &format!("dec{i}.up"), config.channels(i + 1), c, &mut rng)?;
        add_conv(&mut p, &format!("dec{i}.conv1"), 2 * c, c, 3, &mut rng)?;
        add_conv(&mut p, &format!("dec{i}.conv2"), c, c, 3, &mut rng)?;
    }
    add_conv(&mut p, "head", config.channels(1), config.num_classes, 1, &mut rng)?;
    Ok(SegNet { config, params: p, reconstruction: false })
}

/// Adds a reconstruction decoder (no skip connections) to `net`.
pub fn attach_reconstruction_decoder(net: &SegNet, seed: u64) -> Result<SegNet> {
    contract!(!net.reconstruction, "reconstruction decoder already attached");
    let cfg = net.config;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = net.params.clone();
    for i in (1..cfg.levels).rev() {
        let c = cfg.channels(i);
        add_up(&mut p, &format!("{RECON_PREFIX}dec{i}.up"), cfg.channels(i + 1), c, &mut rng)?;
        add_conv(&mut p, &format!("{RECON_PREFIX}dec{i}.conv1"), c, c, 3, &mut rng)?;
        add_conv(&mut p, &format!("{RECON_PREFIX}dec{i}.conv2"), c, c, 3, &mut rng)?;
    }
    add_conv(&mut p, &format!("{RECON_PREFIX}head"), cfg.channels(1), cfg.input_channels, 1, &mut rng)?;
    Ok(SegNet { config: cfg, params: p, reconstruction: true })
}

/// Removes the reconstruction decoder; the segmentation path is untouched.
pub fn strip_reconstruction_decoder(net: &SegNet) -> Result<SegNet> {
    contract!(net.reconstruction, "network has no reconstruction decoder to strip");
    let mut p = net.params.clone();
    p.remove_prefix(RECON_PREFIX);
    Ok(SegNet { config: net.config, params: p, reconstruction: false })
}

fn conv_block<'t>(b: &Bound<'t>, name: &str, x: Var<'t>, spec: &ConvSpec) -> Result<Var<'t>> {
    x.conv2d(b.var(&format!("{name}.w"))?, b.var(&format!("{name}.b"))?, spec)
}

impl SegNet {
    /// Reassembles a network from stored parameters (checkpoint loading).
    pub fn from_params(config: UNetConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let reconstruction = params.iter().any(|(n, _)| n.starts_with(RECON_PREFIX));
        let reference = build_unet(config, 0)?;
        let reference = if reconstruction { attach_reconstruction_decoder(&reference, 0)? } else { reference };
        contract!(
            reference.params.names() == params.names(),
            "parameter names do not match a {}-level network",
            config.levels
        );
        for ((n, a), (_, b)) in reference.params.iter().zip(params.iter()) {
            contract!(a.shape() == b.shape(), "parameter {n}: shape {:?}, want {:?}", b.shape(), a.shape());
        }
        Ok(SegNet { config, params, reconstruction })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn has_reconstruction(&self) -> bool {
        self.reconstruction
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        self.params.bind(tape)
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        contract!(shape.len() == 4, "network input must be NCHW, got {shape:?}");
        contract!(
            shape[1] == self.config.input_channels,
            "network expects {} input channels, got {}",
            self.config.input_channels,
            shape[1]
        );
        let m = self.config.spatial_multiple();
        contract!(
            shape[2] % m == 0 && shape[3] % m == 0,
            "spatial extents {}x{} must be multiples of {m} for a {}-level network",
            shape[2],
            shape[3],
            self.config.levels
        );
        Ok(())
    }

    /// Full forward pass: segmentation plus reconstruction when attached.
    pub fn forward<'t>(&self, bound: &Bound<'t>, x: Var<'t>) -> Result<ForwardArtifacts<'t>> {
        self.forward_heads(bound, x, Heads::ALL)
    }

    pub fn forward_heads<'t>(&self, bound: &Bound<'t>, x: Var<'t>, heads: Heads) -> Result<ForwardArtifacts<'t>> {
        self.check_input(&x.shape())?;
        let cfg = &self.config;
        let mut enc = Vec::with_capacity(cfg.levels);
        let mut h = x;
        let mut cin = cfg.input_channels;
        for i in 1..=cfg.levels {
            if i > 1 {
                h = h.max_pool2d()?;
            }
            let c = cfg.channels(i);
            h = conv_block(bound, &format!("enc{i}.conv1"), h, &ConvSpec::same(3, cin, c))?.relu()?;
            h = conv_block(bound, &format!("enc{i}.conv2"), h, &ConvSpec::same(3, c, c))?.relu()?;
            enc.push(h);
            cin = c;
        }

        let mut logits = None;
        let mut dec = Vec::new();
        if heads.segmentation {
            let mut d = enc[cfg.levels - 1];
            let mut feats = vec![None; cfg.levels - 1];
            for i in (1..cfg.levels).rev() {
                let c = cfg.channels(i);
                let up = d.up_conv2d(
                    bound.var(&format!("dec{i}.up.w"))?,
                    Some(bound.var(&format!("dec{i}.up.b"))?),
                    &ConvSpec::up2(cfg.channels(i + 1), c),
                )?;
                let cat = enc[i - 1].concat_channels(up)?;
                d = conv_block(bound, &format!("dec{i}.conv1"), cat, &ConvSpec::same(3, 2 * c, c))?.relu()?;
                d = conv_block(bound, &format!("dec{i}.conv2"), d, &ConvSpec::same(3, c, c))?.relu()?;
                feats[i - 1] = Some(d);
            }
            dec = feats.into_iter().flatten().collect();
            logits = Some(conv_block(bound, "head", d, &ConvSpec::same(1, cfg.channels(1), cfg.num_classes))?);
        }

        let mut reconstruction = None;
        if heads.reconstruction && self.reconstruction {
            let mut d = enc[cfg.levels - 1];
            for i in (1..cfg.levels).rev() {
                let c = cfg.channels(i);
                let p = format!("{RECON_PREFIX}dec{i}");
                d = d.up_conv2d(
                    bound.var(&format!("{p}.up.w"))?,
                    Some(bound.var(&format!("{p}.up.b"))?),
                    &ConvSpec::up2(cfg.channels(i + 1), c),
                )?;
                d = conv_block(bound, &format!("{p}.conv1"), d, &ConvSpec::same(3, c, c))?.relu()?;
                d = conv_block(bound, &format!("{p}.conv2"), d, &ConvSpec::same(3, c, c))?.relu()?;
            }
            reconstruction = Some(conv_block(
                bound,
                &format!("{RECON_PREFIX}head"),
                d,
                &ConvSpec::same(1, cfg.channels(1), cfg.input_channels),
            )?);
        }

        Ok(ForwardArtifacts { logits, encoder_features: enc, decoder_features: dec, reconstruction })
    }

    /// Logits for a constant input batch, no gradients kept.
    pub fn predict_logits(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let bound = self.bind(&tape);
        let out = self.forward_heads(&bound, tape.constant(x.clone()), Heads::SEGMENTATION)?;
        Ok((*out.logits()?.value()).clone())
    }
}
