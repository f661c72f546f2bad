//! Clip generation, augmentation, batching and on-disk storage.

pub mod augment;
pub mod batch;
pub mod disk;
pub mod sample;
pub mod synth;

pub use augment::{random_frame_drop, spatial_augment, variable_length_crop};
pub use batch::{collate, Batch};
pub use disk::{read_dataset, write_dataset};
pub use sample::SequenceSample;
pub use synth::{
    synth_generate, synth_sample, ContextStyle, Dataset, Split, SplitDatasets, SynthConfig,
};
