//! Desk-scale laboratory for unsupervised projection networks: an encoder
//! is trained to map generator images back onto the latent vector that
//! produced them, then used for super-resolution, out-of-distribution
//! probes, fine-tuning and adversarial experiments, and Ward clustering of
//! the resulting embeddings.

pub mod numcore;
pub mod rng;
pub mod models;
pub mod generators;
pub mod imaging;
pub mod training;
pub mod clustering;
pub mod cli;
