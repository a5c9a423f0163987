//! HR-aware self-supervised super-resolution.
//!
//! An LR-reconstruction network (degradation encoder, image encoder and a
//! modulated reconstructor) is pretrained on synthetic pairs with a
//! quality-driven controller and a Gram-statistics feature-alignment
//! regularizer, then used to finetune a super-resolution model on unpaired LR
//! images from a target domain.

pub mod config;
pub mod controller;
pub mod degrade;
pub mod error;
pub mod evalbench;
pub mod far;
pub mod imagedata;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod par;
pub mod toy;
pub mod train;

pub use error::{Error, Result};
