use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{Volume, LABEL_ABSENT};
use crate::error::{contract, Error, Result};
use crate::nn::{Heads, SegNet};
use crate::tensor::{Tape, Tensor};

/// Binary P5 with maxval 255.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    contract!(pixels.len() == width * height, "PGM {width}x{height} needs {} pixels", width * height);
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a P5 file as written by [`write_pgm`]: `(width, height, pixels)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = || Error::Format(format!("{}: not a P5 PGM", path.display()));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?.to_string());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad());
    }
    let w: usize = fields[1].parse().map_err(|_| bad())?;
    let h: usize = fields[2].parse().map_err(|_| bad())?;
    let pixels = bytes.get(pos..).ok_or_else(bad)?.to_vec();
    if pixels.len() != w * h {
        return Err(bad());
    }
    Ok((w, h, pixels))
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Class `k` of `C` maps to `k·255/(C−1)`; absent labels to 128.
fn label_gray(l: u8, num_classes: usize) -> u8 {
    if l == LABEL_ABSENT {
        128
    } else {
        ((l as usize * 255) / (num_classes - 1)) as u8
    }
}

/// Raw, ground-truth (when `truth` has labels) and prediction PGMs for each
/// listed slice.
pub fn export_images(truth: &Volume, pred: &Volume, slices: &[usize], num_classes: usize, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let [zd, yd, xd] = truth.shape();
    contract!(pred.shape() == truth.shape(), "prediction {:?} vs volume {:?}", pred.shape(), truth.shape());
    contract!(num_classes >= 2, "need at least 2 classes");
    for &z in slices {
        contract!(z < zd, "slice {z} outside 0..{zd}");
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for &z in slices {
        let raw: Vec<u8> = truth.slice(z).iter().map(|&v| quantize(v)).collect();
        let mut items = vec![("raw", raw)];
        if let Some(gt) = truth.label_slice(z) {
            items.push(("gt", gt.iter().map(|&l| label_gray(l, num_classes)).collect()));
        }
        let p = pred.label_slice(z).ok_or_else(|| Error::Contract("prediction volume has no labels".into()))?;
        items.push(("pred", p.iter().map(|&l| label_gray(l, num_classes)).collect()));
        for (kind, pixels) in items {
            let path = out_dir.join(format!("slice{z:03}_{kind}.pgm"));
            write_pgm(&path, xd, yd, &pixels)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Channel-mean heatmap of one feature map (first sample).
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationMap {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl ActivationMap {
    /// Min-max scaled to 0..=255; a constant map becomes 128.
    pub fn to_gray(&self) -> Vec<u8> {
        let lo = self.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi <= lo {
            return vec![128; self.values.len()];
        }
        self.values.iter().map(|v| ((v - lo) / (hi - lo) * 255.0).round() as u8).collect()
    }
}

fn channel_mean(t: &Tensor, name: String) -> Result<ActivationMap> {
    let (_, c, h, w) = t.dims4()?;
    let plane = h * w;
    let mut values = vec![0.0; plane];
    for ch in 0..c {
        for (acc, v) in values.iter_mut().zip(&t.data()[ch * plane..(ch + 1) * plane]) {
            *acc += v;
        }
    }
    values.iter_mut().for_each(|v| *v /= c as f64);
    Ok(ActivationMap { name, height: h, width: w, values })
}

/// Encoder maps `enc1..encD` then decoder maps `dec1..dec(D−1)`.
pub fn activation_maps(net: &SegNet, x: &Tensor) -> Result<Vec<ActivationMap>> {
    let tape = Tape::new();
    let bound = net.bind(&tape);
    let out = net.forward_heads(&bound, tape.constant(x.clone()), Heads::SEGMENTATION)?;
    let mut maps = Vec::new();
    for (i, f) in out.encoder_features.iter().enumerate() {
        maps.push(channel_mean(&f.value(), format!("enc{}", i + 1))?);
    }
    for (i, f) in out.decoder_features.iter().enumerate() {
        maps.push(channel_mean(&f.value(), format!("dec{}", i + 1))?);
    }
    Ok(maps)
}

/// Writes every activation map as `<prefix><name>.pgm`.
pub fn export_activations(net: &SegNet, x: &Tensor, prefix: &str, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for m in activation_maps(net, x)? {
        let path = out_dir.join(format!("{prefix}{}.pgm", m.name));
        write_pgm(&path, m.width, m.height, &m.to_gray())?;
        written.push(path);
    }
    Ok(written)
}

/// Mean absolute difference between matching source and target maps.
pub fn activation_shift(net: &SegNet, source: &Tensor, target: &Tensor) -> Result<Vec<(String, f64)>> {
    let s = activation_maps(net, source)?;
    let t = activation_maps(net, target)?;
    Ok(s.into_iter()
        .zip(t)
        .map(|(a, b)| {
            let d: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).sum();
            (a.name, d / a.values.len() as f64)
        })
        .collect())
}
