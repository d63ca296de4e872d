//! The learned concept space: contrastive training of the FV encoder and the
//! distance measure every diversity metric uses.

pub mod augment;
pub mod encoder;
pub mod ntxent;

pub use augment::{augment, resize_bilinear, AugmentationPolicy};
pub use encoder::{train_encoder, EncoderConfig, EncoderParams};
pub use ntxent::{nt_xent_loss, nt_xent_loss_grad};

// The distance measure itself (cosine similarity / 1 - similarity) lives in
// `crate::metrics`, next to the quantities computed from it.
pub use crate::metrics::{cosine_similarity, fv_distance};
