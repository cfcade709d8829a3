use crate::data::Volume;
use crate::error::{contract, Result};
use crate::nn::SegNet;
use crate::par::Exec;
use crate::tensor::Tensor;

/// Anything that maps an `N×1×H×W` batch to `N×C×H×W` logits.
pub trait Segmenter: Sync {
    fn num_classes(&self) -> usize;
    /// Tile extents must be multiples of this.
    fn spatial_multiple(&self) -> usize;
    fn logits(&self, x: &Tensor) -> Result<Tensor>;
}

impl Segmenter for SegNet {
    fn num_classes(&self) -> usize {
        self.config().num_classes
    }

    fn spatial_multiple(&self) -> usize {
        self.config().spatial_multiple()
    }

    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.predict_logits(x)
    }
}

/// Tile origins covering `extent`: stride `tile − overlap`, last tile flush
/// with the end.
fn origins(extent: usize, tile: usize, overlap: usize) -> Vec<usize> {
    let stride = tile - overlap;
    let mut out: Vec<usize> = (0..).map(|k| k * stride).take_while(|&o| o + tile <= extent).collect();
    if *out.last().expect("tile fits") + tile < extent {
        out.push(extent - tile);
    }
    out
}

/// Slice-by-slice tiled inference. Logits of overlapping tiles are averaged
/// before the argmax; ties go to the lower class. Returns a volume whose
/// labels are the prediction and whose intensities are `label / (C−1)`.
pub fn predict_volume(net: &dyn Segmenter, v: &Volume, tile: [usize; 2], overlap: usize, exec: Exec) -> Result<Volume> {
    let [zd, yd, xd] = v.shape();
    let [th, tw] = tile;
    let m = net.spatial_multiple();
    contract!(th >= 1 && tw >= 1 && th % m == 0 && tw % m == 0, "tile {tile:?} must be a positive multiple of {m}");
    contract!(th <= yd && tw <= xd, "tile {th}x{tw} larger than slice {yd}x{xd}");
    contract!(overlap < th && overlap < tw, "overlap {overlap} must be smaller than the tile {tile:?}");
    let c = net.num_classes();
    let ys = origins(yd, th, overlap);
    let xs = origins(xd, tw, overlap);
    let positions: Vec<(usize, usize)> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (y, x))).collect();

    let slices = exec.map(zd, |z| -> Result<Vec<u8>> {
        let slice = v.slice(z);
        let mut batch = Vec::with_capacity(positions.len() * th * tw);
        for &(y, x) in &positions {
            for r in y..y + th {
                batch.extend(slice[r * xd + x..r * xd + x + tw].iter().map(|&p| p as f64));
            }
        }
        let input = Tensor::new(vec![positions.len(), 1, th, tw], batch)?;
        let logits = net.logits(&input)?;
        contract!(
            logits.shape() == [positions.len(), c, th, tw],
            "segmenter returned logits of shape {:?}",
            logits.shape()
        );
        let mut sum = vec![0.0f64; c * yd * xd];
        let mut count = vec![0u32; yd * xd];
        for (k, &(y, x)) in positions.iter().enumerate() {
            for ch in 0..c {
                let src = &logits.data()[(k * c + ch) * th * tw..(k * c + ch + 1) * th * tw];
                for r in 0..th {
                    for q in 0..tw {
                        sum[ch * yd * xd + (y + r) * xd + x + q] += src[r * tw + q];
                    }
                }
            }
            for r in 0..th {
                for q in 0..tw {
                    count[(y + r) * xd + x + q] += 1;
                }
            }
        }
        Ok((0..yd * xd)
            .map(|i| {
                let n = count[i] as f64;
                let mut best = 0;
                for ch in 1..c {
                    if sum[ch * yd * xd + i] / n > sum[best * yd * xd + i] / n {
                        best = ch;
                    }
                }
                best as u8
            })
            .collect())
    });
    let mut labels = Vec::with_capacity(v.len());
    for s in slices {
        labels.extend(s?);
    }
    let scale = (c - 1) as f32;
    let intensities = labels.iter().map(|&l| l as f32 / scale).collect();
    Volume::new(v.shape(), intensities, Some(labels), v.spacing_nm())
}
