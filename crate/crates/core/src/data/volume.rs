use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Label value marking a voxel whose annotation is withheld.
pub const LABEL_ABSENT: u8 = 255;

/// A 3-D image stack, row-major with z slowest.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    shape: [usize; 3],
    intensities: Vec<f32>,
    labels: Option<Vec<u8>>,
    spacing_nm: [f64; 3],
}

impl Volume {
    pub fn new(shape: [usize; 3], intensities: Vec<f32>, labels: Option<Vec<u8>>, spacing_nm: [f64; 3]) -> Result<Self> {
        let n = shape.iter().product::<usize>();
        contract!(shape.iter().all(|&s| s > 0), "volume extents must be positive, got {shape:?}");
        contract!(intensities.len() == n, "volume {shape:?} needs {n} intensities, got {}", intensities.len());
        contract!(
            intensities.iter().all(|v| (0.0..=1.0).contains(v)),
            "intensities must lie in [0, 1]"
        );
        if let Some(l) = &labels {
            contract!(l.len() == n, "labels must share the intensity shape {shape:?}");
        }
        Ok(Volume { shape, intensities, labels, spacing_nm })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.intensities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intensities.is_empty()
    }

    pub fn plane(&self) -> usize {
        self.shape[1] * self.shape[2]
    }

    pub fn spacing_nm(&self) -> [f64; 3] {
        self.spacing_nm
    }

    pub fn intensities(&self) -> &[f32] {
        &self.intensities
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn has_labels(&self) -> bool {
        self.labels.is_some()
    }

    pub fn slice(&self, z: usize) -> &[f32] {
        let p = self.plane();
        &self.intensities[z * p..(z + 1) * p]
    }

    pub fn label_slice(&self, z: usize) -> Option<&[u8]> {
        let p = self.plane();
        self.labels.as_ref().map(|l| &l[z * p..(z + 1) * p])
    }

    /// A slice counts as labeled when none of its voxels is [`LABEL_ABSENT`].
    pub fn labeled_slices(&self) -> Vec<usize> {
        match &self.labels {
            None => Vec::new(),
            Some(l) => {
                let p = self.plane();
                (0..self.shape[0]).filter(|&z| l[z * p..(z + 1) * p].iter().all(|&v| v != LABEL_ABSENT)).collect()
            }
        }
    }

    /// Same intensities, no labels.
    pub fn without_labels(&self) -> Volume {
        Volume { labels: None, ..self.clone() }
    }

    pub fn with_labels(&self, labels: Vec<u8>) -> Result<Volume> {
        Volume::new(self.shape, self.intensities.clone(), Some(labels), self.spacing_nm)
    }

    pub fn mean_intensity(&self) -> f64 {
        self.intensities.iter().map(|&v| v as f64).sum::<f64>() / self.len() as f64
    }

    /// Sub-volume `x ∈ [x0, x1)`.
    pub fn crop_x(&self, x0: usize, x1: usize) -> Result<Volume> {
        let [z, y, x] = self.shape;
        contract!(x0 < x1 && x1 <= x, "crop [{x0}, {x1}) outside x extent {x}");
        let labels = self.labels.as_ref().map(|l| crop_rows(l, x, x0, x1));
        Ok(Volume {
            shape: [z, y, x1 - x0],
            intensities: crop_rows(&self.intensities, x, x0, x1),
            labels,
            spacing_nm: self.spacing_nm,
        })
    }

    /// Joins two volumes along x.
    pub fn concat_x(&self, other: &Volume) -> Result<Volume> {
        let [z, y, xa] = self.shape;
        let xb = other.shape[2];
        contract!(other.shape[..2] == self.shape[..2], "z/y extents differ: {:?} vs {:?}", self.shape, other.shape);
        contract!(self.has_labels() == other.has_labels(), "cannot join labeled with unlabeled volume");
        let labels = match (&self.labels, &other.labels) {
            (Some(la), Some(lb)) => Some(join_rows(la, xa, lb, xb)),
            _ => None,
        };
        Ok(Volume {
            shape: [z, y, xa + xb],
            intensities: join_rows(&self.intensities, xa, &other.intensities, xb),
            labels,
            spacing_nm: self.spacing_nm,
        })
    }
}

fn crop_rows<T: Copy>(src: &[T], x: usize, x0: usize, x1: usize) -> Vec<T> {
    src.chunks(x).flat_map(|row| row[x0..x1].iter().copied()).collect()
}

fn join_rows<T: Copy>(a: &[T], xa: usize, b: &[T], xb: usize) -> Vec<T> {
    a.chunks(xa).zip(b.chunks(xb)).flat_map(|(ra, rb)| ra.iter().chain(rb).copied()).collect()
}

/// Splits along x into `[0, floor(f·X))` and the remainder.
pub fn split_x(v: &Volume, train_fraction: f64) -> Result<(Volume, Volume)> {
    contract!(
        train_fraction > 0.0 && train_fraction < 1.0,
        "train fraction must lie in (0, 1), got {train_fraction}"
    );
    let x = v.shape[2];
    contract!(x >= 2, "split needs X >= 2, got {x}");
    let cut = (train_fraction * x as f64).floor() as usize;
    contract!(cut >= 1 && cut < x, "fraction {train_fraction} leaves an empty part of X={x}");
    Ok((v.crop_x(0, cut)?, v.crop_x(cut, x)?))
}

/// Keeps labels on the first `floor(p·Z)` slices only.
pub fn subset_labels(v: &Volume, p: f64) -> Result<Volume> {
    contract!((0.0..=1.0).contains(&p), "label fraction must lie in [0, 1], got {p}");
    let labels = match &v.labels {
        Some(l) => l,
        None => return Err(crate::Error::Contract("subset_labels needs a labeled volume".into())),
    };
    let z = v.shape[0];
    let keep = (p * z as f64).floor() as usize;
    if p > 0.0 && keep == 0 {
        log::warn!("label fraction {p} of {z} slices keeps no labeled slice");
    }
    let cut = keep * v.plane();
    let mut out = labels.clone();
    out[cut..].fill(LABEL_ABSENT);
    Ok(Volume { labels: Some(out), ..v.clone() })
}

/// Header fields, in the order they are written.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub shape: [usize; 3],
    pub dtype: String,
    pub spacing_nm: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
}
