use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::volume::Volume;
use crate::error::{contract, Result};
use crate::tensor::Tensor;

/// Flips then rotation, applied in that order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Augment {
    /// Mirror along x.
    pub flip_h: bool,
    /// Mirror along y.
    pub flip_v: bool,
    /// Counter-clockwise quarter turns, 0..4.
    pub rot90: u8,
}

impl Augment {
    pub const IDENTITY: Augment = Augment { flip_h: false, flip_v: false, rot90: 0 };

    pub fn random<R: Rng>(rng: &mut R, square: bool) -> Augment {
        let flip_h = rng.gen();
        let flip_v = rng.gen();
        let rot90 = if square { rng.gen_range(0..4) } else { 2 * rng.gen_range(0..2) };
        Augment { flip_h, flip_v, rot90 }
    }

    /// Output extents for an `h×w` input.
    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        if self.rot90 % 2 == 1 {
            (w, h)
        } else {
            (h, w)
        }
    }

    pub fn apply<T: Copy>(&self, src: &[T], h: usize, w: usize) -> Vec<T> {
        let mut cur = src.to_vec();
        if self.flip_h {
            cur = flip_h(&cur, h, w);
        }
        if self.flip_v {
            cur = flip_v(&cur, h, w);
        }
        let (mut ch, mut cw) = (h, w);
        for _ in 0..self.rot90 % 4 {
            cur = rot90(&cur, ch, cw);
            std::mem::swap(&mut ch, &mut cw);
        }
        cur
    }

    /// Undoes [`Augment::apply`]; `h×w` are the *original* extents.
    pub fn invert<T: Copy>(&self, src: &[T], h: usize, w: usize) -> Vec<T> {
        let (mut ch, mut cw) = self.out_dims(h, w);
        let mut cur = src.to_vec();
        for _ in 0..(4 - self.rot90 % 4) % 4 {
            cur = rot90(&cur, ch, cw);
            std::mem::swap(&mut ch, &mut cw);
        }
        if self.flip_v {
            cur = flip_v(&cur, h, w);
        }
        if self.flip_h {
            cur = flip_h(&cur, h, w);
        }
        cur
    }
}

fn flip_h<T: Copy>(src: &[T], h: usize, w: usize) -> Vec<T> {
    (0..h).flat_map(|y| (0..w).rev().map(move |x| src[y * w + x])).collect()
}

fn flip_v<T: Copy>(src: &[T], h: usize, w: usize) -> Vec<T> {
    (0..h).rev().flat_map(|y| src[y * w..(y + 1) * w].iter().copied()).collect()
}

/// Counter-clockwise quarter turn of an `h×w` array into `w×h`.
fn rot90<T: Copy>(src: &[T], h: usize, w: usize) -> Vec<T> {
    // out[i][j] = src[j][w-1-i]
    (0..w).flat_map(|i| (0..h).map(move |j| src[j * w + (w - 1 - i)])).collect()
}

/// Where a patch came from and how it was transformed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub volume: usize,
    pub z: usize,
    pub y: usize,
    pub x: usize,
    pub augment: Augment,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchBatch {
    /// `N×1×H×W`.
    pub images: Tensor,
    /// `N·H·W` class indices when sampled with labels.
    pub labels: Option<Vec<usize>>,
    pub provenance: Vec<Provenance>,
}

impl PatchBatch {
    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }
}

/// Patch geometry and label policy for [`sample_patch_batch`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchSpec {
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub augment: bool,
    /// Draw only from fully labeled slices and return the label crops.
    /// When false the label array is never touched.
    pub with_labels: bool,
}

/// `n` patches from seed `seed`; see [`sample_patch_batch_with`].
pub fn sample_patch_batch(v: &Volume, spec: &PatchSpec, seed: u64) -> Result<PatchBatch> {
    sample_patch_batch_with(v, spec, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Uniform origins `z ∈ [0,Z)`, `y ∈ [0,Y−H]`, `x ∈ [0,X−W]` (z restricted to
/// labeled slices when labels are requested). With augmentation on, a
/// rectangular patch is only ever rotated by 0 or 180 degrees so the batch
/// keeps a single `H×W` shape.
pub fn sample_patch_batch_with<R: Rng>(v: &Volume, spec: &PatchSpec, rng: &mut R) -> Result<PatchBatch> {
    let [zdim, ydim, xdim] = v.shape();
    let (h, w) = (spec.height, spec.width);
    contract!(spec.n >= 1, "patch batch needs n >= 1");
    contract!(h >= 1 && w >= 1, "patch extents must be positive");
    contract!(h <= ydim && w <= xdim, "patch {h}x{w} larger than slice {ydim}x{xdim}");
    let slices: Vec<usize> = if spec.with_labels {
        let s = v.labeled_slices();
        contract!(!s.is_empty(), "labeled patches requested from a volume without labeled slices");
        s
    } else {
        (0..zdim).collect()
    };

    let mut images = Vec::with_capacity(spec.n * h * w);
    let mut labels = spec.with_labels.then(|| Vec::with_capacity(spec.n * h * w));
    let mut provenance = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let z = slices[rng.gen_range(0..slices.len())];
        let y = rng.gen_range(0..=ydim - h);
        let x = rng.gen_range(0..=xdim - w);
        let augment = if spec.augment { Augment::random(rng, h == w) } else { Augment::IDENTITY };
        let raw = crop(v.slice(z), xdim, y, x, h, w);
        images.extend(augment.apply(&raw, h, w).into_iter().map(f64::from));
        if let Some(out) = labels.as_mut() {
            let src = v.label_slice(z).expect("labeled slices imply labels");
            let lc = crop(src, xdim, y, x, h, w);
            out.extend(augment.apply(&lc, h, w).into_iter().map(usize::from));
        }
        provenance.push(Provenance { volume: 0, z, y, x, augment });
    }
    Ok(PatchBatch { images: Tensor::new(vec![spec.n, 1, h, w], images)?, labels, provenance })
}

fn crop<T: Copy>(slice: &[T], xdim: usize, y: usize, x: usize, h: usize, w: usize) -> Vec<T> {
    (y..y + h).flat_map(|r| slice[r * xdim + x..r * xdim + x + w].iter().copied()).collect()
}

/// The raw crop a provenance record refers to.
pub fn raw_crop(v: &Volume, p: &Provenance, h: usize, w: usize) -> Result<Vec<f32>> {
    let [zdim, ydim, xdim] = v.shape();
    contract!(p.z < zdim && p.y + h <= ydim && p.x + w <= xdim, "provenance {p:?} outside volume {:?}", v.shape());
    Ok(crop(v.slice(p.z), xdim, p.y, p.x, h, w))
}
