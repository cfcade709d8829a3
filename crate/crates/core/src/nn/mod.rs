//! Network definitions: the U-Net/Y-Net segmentation model and the DANN
//! domain classifier.

mod classifier;
pub mod init;
mod params;
mod unet;

pub use classifier::{DomainClassifier, DEFAULT_HIDDEN};
pub use params::{Bound, ParamStore};
pub use unet::{
    attach_reconstruction_decoder, build_unet, strip_reconstruction_decoder, ForwardArtifacts, Heads, SegNet,
    UNetConfig, RECON_PREFIX,
};
