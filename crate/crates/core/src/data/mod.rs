//! Volumes, raw+header I/O, splitting, patch sampling and synthetic
//! domain-shifted pairs.

mod io;
mod sample;
mod synth;
mod volume;

pub use io::{labels_path, load_volume, read_header, save_volume, save_volume_as, Dtype};
pub use sample::{raw_crop, sample_patch_batch, sample_patch_batch_with, Augment, PatchBatch, PatchSpec, Provenance};
pub use synth::{apply_shift, synth_domain_pair, synth_domain_pair_with, DomainPair, Shift, SynthConfig};
pub use volume::{split_x, subset_labels, Header, Volume, LABEL_ABSENT};
