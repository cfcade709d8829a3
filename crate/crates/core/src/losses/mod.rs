//! Domain discrepancies and the total training objectives.

mod alignment;
mod coral;
mod dann;
mod features;
mod mmd;

pub use alignment::{
    alignment_total_loss, segmentation_loss, ynet_total_loss, AlignmentSpec, Discrepancy, LossBreakdown, LossTerm,
    Method, SpecDiscrepancy,
};
pub use coral::coral;
pub use dann::dann_loss;
pub use features::{pool_features, Domain, FeatureBatch};
pub use mmd::{median_pairwise_distance, mmd2, mmd2_with_policy, BandwidthPolicy};
