//! Scoring, tiled prediction, CSV reports and PGM exports.

mod images;
mod metrics;
mod predict;
mod report;

pub use images::{activation_maps, activation_shift, export_activations, export_images, quantize, read_pgm, write_pgm, ActivationMap};
pub use metrics::{foreground_iou, iou, per_class_iou};
pub use predict::{predict_volume, Segmenter};
pub use report::{curve_csv, emit_report, fmt2, read_csv, results_csv, table_csv, CurvePoint, EvalResult};
