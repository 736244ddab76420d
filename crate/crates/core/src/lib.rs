//! Bag-label-aware contrastive pre-training for multiple instance learning.
//!
//! The crate covers the whole synthetic experiment: contrastive losses with
//! analytic gradients ([`losses`]), a seeded bag generator ([`datagen`]), a
//! small MLP encoder trained with Adam ([`encoder`]), attention MIL on frozen
//! features ([`mil`]) and the command-line pipeline ([`harness`]).

pub mod datagen;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod label;
pub mod losses;
pub mod mil;
pub mod numerics;
pub mod optim;
pub mod rng;

pub use error::{Error, Result};
pub use label::Label;
