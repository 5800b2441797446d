//! Importance weights between a labeled source domain and an unlabeled
//! target domain under an exponential tilt model, fitted with Exponential
//! Tilt Reweighting Alignment (ExTRA).
//!
//! The weight of a source row is `w(x, u) = exp(theta_u . T(x) + alpha_u)`.
//! Parameters are chosen so that the reweighted source feature marginal
//! matches the target feature marginal in KL divergence, which needs only a
//! probabilistic classifier trained on the source, never a density estimate.
//!
//! Modules:
//!
//! - [`tilt`]: datasets, sufficient statistics, parameters and the exact
//!   discrete oracle.
//! - [`classifier`]: the source classifier `eta_W`.
//! - [`fit`]: the ExTRA objective, its gradient and the fitting loop.
//! - [`rtb`]: an auction simulator that produces selection-biased domains.
//! - [`evaluation`]: reweighted risk, KL diagnostics, anchor sets, effective
//!   sample size and weighted fine-tuning.
//! - [`io`]: CSV formats.
//!
//! ```
//! use extra_tilt::tilt::{tilt_weight, TiltParams};
//!
//! let params = TiltParams::new(vec![0.5f64.ln()], (32.0f64 / 9.0).ln(), vec![0.0], 0.0)?;
//! let w = tilt_weight(&params, &[2.0], 0)?;
//! assert!((w - 8.0 / 9.0).abs() < 1e-12);
//! # Ok::<(), extra_tilt::Error>(())
//! ```

pub mod classifier;
pub mod error;
pub mod evaluation;
pub mod fit;
pub mod io;
pub mod rtb;
pub mod tilt;

pub use error::{Error, Result};

/// Version string echoed into every output document.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// The guide's code blocks, compiled and run as doctests.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tilt-model.md")]
    mod tilt_model {}
    #[doc = include_str!("../../../book/src/extra.md")]
    mod extra {}
    #[doc = include_str!("../../../book/src/selection-bias.md")]
    mod selection_bias {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
