//! propnet: path-loss prediction over GIS rasters.
//!
//! The crate turns clutter / building-height / terrain grids plus an
//! antenna configuration into radio path-loss maps three ways:
//!
//! * [`empirical`] — closed-form Okumura-Hata and SPM-style models,
//!   including least-squares calibration of SPM constants against
//!   drive-test measurements;
//! * [`raysim`] — a deterministic synthetic simulator (free-space +
//!   multi-knife-edge diffraction + clutter offsets) used as a label
//!   oracle for training data;
//! * [`net`] — a from-scratch encoder-decoder convolutional network that
//!   maps 8-channel scene tensors to dense path-loss fields, trained with
//!   masked losses so sparse drive-test labels can supervise it.
//!
//! Supporting modules: [`geodata`] (ASCII-grid rasters, patch
//! extraction), [`antenna`] (radiation patterns, geometry), [`tensor`]
//! (input-tensor assembly, dihedral augmentation, tensor files),
//! [`harness`] (dataset synthesis, training loop, evaluation,
//! fine-tuning), and [`cli`] (the `propnet` command-line front end).

pub mod antenna;
pub mod cli;
pub mod empirical;
pub mod geodata;
pub mod harness;
pub mod net;
pub mod raysim;
pub mod tensor;
