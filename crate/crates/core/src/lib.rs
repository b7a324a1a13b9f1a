//! Meta-auto-decoder solver for parametric PDEs.
//!
//! A latent-conditioned sine network `f(x, z)` is pre-trained on a family of
//! PDE tasks with physics-informed losses. An unseen task is then solved by
//! optimizing only its latent code (MAD-L) or the latent code together with
//! the network weights (MAD-LM).

pub mod baselines;
pub mod benchviz;
pub mod binio;
pub mod cli;
pub mod diffcore;
pub mod error;
pub mod grf;
pub mod mad;
pub mod network;
pub mod oracles;
pub mod problems;
pub mod trainer;

pub use error::{Error, Result};
