//! Tag-assisted transformer encoder for multimodal sentiment classification
//! under uncertain missing modalities.
//!
//! The pipeline zero-masks missing modalities, marks them with a 4-digit tag,
//! encodes each modality with multi-head self-attention, projects the results
//! into a shared space through pairwise shared matrices, and runs the joint
//! vector through a one-sublayer transformer encoder-decoder. Training
//! combines cross-entropy with a teacher-alignment divergence, a
//! reconstruction divergence, and a tag recovery term; everything
//! differentiates through a small reverse-mode engine with a
//! finite-difference oracle.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod gradcheck;
pub mod graph;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod training;
