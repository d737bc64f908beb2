//! Higher-order Langevin diffusion (HOLD) processes and the tools to study
//! how they memorise training data.

pub mod error;
pub mod filter;
pub mod forward;
pub mod hold;
pub mod lab;
pub mod metrics;
pub mod plot;
pub mod rng;
pub mod sampler;
pub mod score;

pub use error::{HoldError, Result};

/// Smallest diffusion time reached by samplers and loss estimates.
pub const T_EPS: f64 = 1e-3;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/lifted-process.md")]
    mod lifted_process {}
    #[doc = include_str!("../../../book/src/forward-marginals.md")]
    mod forward_marginals {}
    #[doc = include_str!("../../../book/src/empirical-score.md")]
    mod empirical_score {}
    #[doc = include_str!("../../../book/src/sampling.md")]
    mod sampling {}
    #[doc = include_str!("../../../book/src/filters.md")]
    mod filters {}
    #[doc = include_str!("../../../book/src/memorization.md")]
    mod memorization {}
}
