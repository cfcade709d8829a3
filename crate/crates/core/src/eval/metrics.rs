use crate::error::{contract, Result};

/// `|pred=c ∧ gt=c| / |pred=c ∨ gt=c|`, 1.0 when class `c` is absent from both.
pub fn iou<T: Copy + PartialEq>(pred: &[T], gt: &[T], class: T) -> Result<f64> {
    contract!(pred.len() == gt.len(), "prediction has {} voxels, ground truth {}", pred.len(), gt.len());
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gt) {
        let (a, b) = (p == class, g == class);
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Mean IoU over the foreground classes `1..C`, skipping voxels whose
/// ground truth is `ignore`.
pub fn foreground_iou(pred: &[u8], gt: &[u8], num_classes: usize, ignore: u8) -> Result<f64> {
    let per = per_class_iou(pred, gt, num_classes, ignore)?;
    Ok(per[1..].iter().sum::<f64>() / (num_classes - 1) as f64)
}

pub fn per_class_iou(pred: &[u8], gt: &[u8], num_classes: usize, ignore: u8) -> Result<Vec<f64>> {
    contract!(num_classes >= 2, "need at least 2 classes");
    contract!(pred.len() == gt.len(), "prediction has {} voxels, ground truth {}", pred.len(), gt.len());
    let (p, g): (Vec<u8>, Vec<u8>) = pred.iter().zip(gt).filter(|(_, &g)| g != ignore).map(|(&p, &g)| (p, g)).unzip();
    (0..num_classes).map(|c| iou(&p, &g, c as u8)).collect()
}
