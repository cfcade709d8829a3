use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::volume::{split_x, Volume};
use crate::error::{contract, Error, Result};
use crate::rng::keyed_rng;

/// Source-to-target transformation of a synthetic pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shift {
    /// `x → 1 − x`.
    Invert,
    /// Affine intensity remap plus Gaussian noise of σ = 0.1.
    ContrastNoise,
    /// Gaussian blur along z, as in thick-section imaging.
    AnisotropyBlur,
}

impl Shift {
    pub const ALL: [Shift; 3] = [Shift::Invert, Shift::ContrastNoise, Shift::AnisotropyBlur];

    pub fn name(self) -> &'static str {
        match self {
            Shift::Invert => "invert",
            Shift::ContrastNoise => "contrast-noise",
            Shift::AnisotropyBlur => "anisotropy-blur",
        }
    }
}

impl std::fmt::Display for Shift {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Shift {
    type Err = Error;

    fn from_str(s: &str) -> Result<Shift> {
        Shift::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let valid: Vec<_> = Shift::ALL.iter().map(|m| m.name()).collect();
            Error::Config(format!("unknown shift {s:?}; valid shifts: {}", valid.join(", ")))
        })
    }
}

/// Generator settings for [`synth_domain_pair_with`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    /// `[Z, Y, X]`.
    pub shape: [usize; 3],
    /// Blobs are added until this fraction of voxels is foreground.
    pub blob_fraction: f64,
    /// Ellipsoid semi-axis ranges in voxels: z, then in-plane.
    pub radius_z: [f64; 2],
    pub radius_xy: [f64; 2],
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { shape: [20, 96, 96], blob_fraction: 0.15, radius_z: [2.0, 4.0], radius_xy: [5.0, 11.0] }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        contract!(self.shape.iter().all(|&s| s >= 4), "synthetic volume extents must be >= 4, got {:?}", self.shape);
        contract!(
            (0.05..=0.3).contains(&self.blob_fraction),
            "blob fraction must lie in [0.05, 0.3], got {}",
            self.blob_fraction
        );
        for r in [self.radius_z, self.radius_xy] {
            contract!(r[0] > 0.0 && r[0] <= r[1], "invalid radius range {r:?}");
        }
        Ok(())
    }
}

/// Labeled source and shifted target. Target labels are held back and
/// every access to them is counted.
#[derive(Debug)]
pub struct DomainPair {
    source: Volume,
    target: Volume,
    target_truth: Vec<u8>,
    image_reads: AtomicUsize,
    label_reads: AtomicUsize,
}

impl Clone for DomainPair {
    fn clone(&self) -> Self {
        DomainPair::new(self.source.clone(), self.target.with_labels(self.target_truth.clone()).expect("same shape"))
            .expect("validated on construction")
    }
}

impl DomainPair {
    /// Both volumes must carry labels; the target's are hidden.
    pub fn new(source: Volume, target: Volume) -> Result<DomainPair> {
        contract!(source.has_labels(), "source volume must be labeled");
        let truth = match target.labels() {
            Some(l) => l.to_vec(),
            None => return Err(Error::Contract("target volume needs ground truth for evaluation".into())),
        };
        Ok(DomainPair {
            source,
            target: target.without_labels(),
            target_truth: truth,
            image_reads: AtomicUsize::new(0),
            label_reads: AtomicUsize::new(0),
        })
    }

    pub fn source(&self) -> &Volume {
        &self.source
    }

    /// Target intensities without labels.
    pub fn target_images(&self) -> &Volume {
        self.image_reads.fetch_add(1, Ordering::Relaxed);
        &self.target
    }

    /// Target volume with its ground truth attached.
    pub fn target_labeled(&self) -> Volume {
        self.label_reads.fetch_add(1, Ordering::Relaxed);
        self.target.with_labels(self.target_truth.clone()).expect("same shape")
    }

    pub fn target_image_reads(&self) -> usize {
        self.image_reads.load(Ordering::Relaxed)
    }

    pub fn target_label_reads(&self) -> usize {
        self.label_reads.load(Ordering::Relaxed)
    }

    /// Splits both domains along x; the parts start with fresh counters.
    pub fn split_x(&self, train_fraction: f64) -> Result<(DomainPair, DomainPair)> {
        let (s_train, s_test) = split_x(&self.source, train_fraction)?;
        let full = self.target.with_labels(self.target_truth.clone())?;
        let (t_train, t_test) = split_x(&full, train_fraction)?;
        Ok((DomainPair::new(s_train, t_train)?, DomainPair::new(s_test, t_test)?))
    }
}

/// Pair with the default generator settings.
pub fn synth_domain_pair(seed: u64, shift: Shift) -> DomainPair {
    synth_domain_pair_with(seed, shift, &SynthConfig::default()).expect("default config is valid")
}

pub fn synth_domain_pair_with(seed: u64, shift: Shift, cfg: &SynthConfig) -> Result<DomainPair> {
    cfg.validate()?;
    let source = synth_volume(&mut keyed_rng(seed, &[0]), cfg, [10.0, 10.0, 10.0])?;
    let base = synth_volume(&mut keyed_rng(seed, &[1]), cfg, [10.0, 10.0, 10.0])?;
    let target = apply_shift(&base, shift, &mut keyed_rng(seed, &[2]))?;
    DomainPair::new(source, target)
}

/// Applies `shift` to intensities, keeping labels.
pub fn apply_shift<R: Rng>(v: &Volume, shift: Shift, rng: &mut R) -> Result<Volume> {
    let shape = v.shape();
    let mut spacing = v.spacing_nm();
    let data: Vec<f32> = match shift {
        Shift::Invert => v.intensities().iter().map(|&x| 1.0 - x).collect(),
        Shift::ContrastNoise => {
            let noise = Normal::new(0.0, 0.1).expect("valid sigma");
            v.intensities()
                .iter()
                .map(|&x| (0.5 * x as f64 + 0.3 + noise.sample(rng)).clamp(0.0, 1.0) as f32)
                .collect()
        }
        Shift::AnisotropyBlur => {
            spacing[0] *= 5.0;
            let mut field: Vec<f64> = v.intensities().iter().map(|&x| x as f64).collect();
            blur_axis(&mut field, shape, 0, 1.5);
            field.into_iter().map(|x| x.clamp(0.0, 1.0) as f32).collect()
        }
    };
    Volume::new(shape, data, v.labels().map(<[u8]>::to_vec), spacing)
}

struct Blob {
    center: [f64; 3],
    radius: [f64; 3],
    /// In-plane orientation.
    theta: f64,
    period: f64,
    phase: f64,
}

impl Blob {
    /// In-plane coordinates along and across the blob's orientation.
    fn local(&self, y: f64, x: f64) -> (f64, f64) {
        let (dy, dx) = (y - self.center[1], x - self.center[2]);
        let (s, c) = self.theta.sin_cos();
        (c * dx + s * dy, -s * dx + c * dy)
    }

    fn normalized_radius(&self, z: f64, y: f64, x: f64) -> f64 {
        let (u, v) = self.local(y, x);
        let dz = (z - self.center[0]) / self.radius[0];
        (dz * dz + (u / self.radius[2]).powi(2) + (v / self.radius[1]).powi(2)).sqrt()
    }
}

fn synth_volume<R: Rng>(rng: &mut R, cfg: &SynthConfig, spacing: [f64; 3]) -> Result<Volume> {
    let shape = cfg.shape;
    let [zd, yd, xd] = shape;
    let n = zd * yd * xd;
    let std_normal = Normal::new(0.0, 1.0).expect("valid sigma");

    // Smooth background texture, rescaled to unit deviation.
    let mut texture: Vec<f64> = (0..n).map(|_| std_normal.sample(rng)).collect();
    blur_axis(&mut texture, shape, 0, 1.0);
    blur_axis(&mut texture, shape, 1, 2.0);
    blur_axis(&mut texture, shape, 2, 2.0);
    let sd = (texture.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt().max(1e-12);
    texture.iter_mut().for_each(|v| *v /= sd);

    let mut inside = vec![0.0f64; n];
    let mut ring = vec![0.0f64; n];
    let mut interior = vec![0.0f64; n];
    let mut labels = vec![0u8; n];
    let mut count = 0usize;
    let want = (cfg.blob_fraction * n as f64).ceil() as usize;
    let mut attempts = 0;
    while count < want && attempts < 10_000 {
        attempts += 1;
        let blob = Blob {
            center: [rng.gen_range(0.0..zd as f64), rng.gen_range(0.0..yd as f64), rng.gen_range(0.0..xd as f64)],
            radius: [
                rng.gen_range(cfg.radius_z[0]..=cfg.radius_z[1]),
                rng.gen_range(cfg.radius_xy[0]..=cfg.radius_xy[1]) * 0.6,
                rng.gen_range(cfg.radius_xy[0]..=cfg.radius_xy[1]),
            ],
            theta: rng.gen_range(0.0..std::f64::consts::PI),
            period: rng.gen_range(3.0..4.5),
            phase: rng.gen_range(0.0..std::f64::consts::TAU),
        };
        let reach = blob.radius.iter().cloned().fold(0.0, f64::max) * 1.3;
        let lo = |c: f64, r: f64| (c - r).floor().max(0.0) as usize;
        let hi = |c: f64, r: f64, d: usize| ((c + r).ceil() as usize + 1).min(d);
        for z in lo(blob.center[0], blob.radius[0] * 1.3)..hi(blob.center[0], blob.radius[0] * 1.3, zd) {
            for y in lo(blob.center[1], reach)..hi(blob.center[1], reach, yd) {
                for x in lo(blob.center[2], reach)..hi(blob.center[2], reach, xd) {
                    let i = (z * yd + y) * xd + x;
                    let r = blob.normalized_radius(z as f64, y as f64, x as f64);
                    let m = 1.0 / (1.0 + ((r - 1.0) / 0.06).exp());
                    let g = (-((r - 1.0) / 0.12).powi(2)).exp();
                    if m > inside[i] {
                        inside[i] = m;
                        let (_, v) = blob.local(y as f64, x as f64);
                        interior[i] = 0.5 + 0.12 * (std::f64::consts::TAU * v / blob.period + blob.phase).sin();
                    }
                    ring[i] = ring[i].max(g);
                    if r < 1.0 && labels[i] == 0 {
                        labels[i] = 1;
                        count += 1;
                    }
                }
            }
        }
    }

    let noise = Normal::new(0.0, 0.02).expect("valid sigma");
    let data: Vec<f32> = (0..n)
        .map(|i| {
            let bg = 0.62 + 0.1 * texture[i];
            let v = bg * (1.0 - inside[i]) + interior[i] * inside[i] - 0.4 * ring[i] + noise.sample(rng);
            v.clamp(0.0, 1.0) as f32
        })
        .collect();
    Volume::new(shape, data, Some(labels), spacing)
}

/// In-place Gaussian blur along one axis with clamped borders.
fn blur_axis(data: &mut [f64], shape: [usize; 3], axis: usize, sigma: f64) {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let stride = match axis {
        0 => shape[1] * shape[2],
        1 => shape[2],
        _ => 1,
    };
    let len = shape[axis] as isize;
    let src = data.to_vec();
    for (i, out) in data.iter_mut().enumerate() {
        let pos = ((i / stride) % shape[axis]) as isize;
        let base = i as isize - pos * stride as isize;
        let mut acc = 0.0;
        for (k, w) in kernel.iter().enumerate() {
            let p = (pos + k as isize - radius).clamp(0, len - 1);
            acc += w * src[(base + p * stride as isize) as usize];
        }
        *out = acc / norm;
    }
}
