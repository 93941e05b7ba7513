//! Contact-dynamism analysis of ligand subtypes: topology and trajectory I/O,
//! contact tensors, a convolutional VAE ensemble, latent-space clustering,
//! subtype ranking and free-energy perturbation estimates.

pub mod clustering;
pub mod contacts;
pub mod cvae;
pub mod fep;
pub mod geometry;
pub mod model_io;
pub mod ranking;
pub mod subtypes;
pub mod synth;
pub mod cli;
pub mod pipeline;
pub mod render;
