//! Latent domain generalization with collaborative domain prompts.
//!
//! The crate trains a small vision transformer in two phases. A plain
//! empirical-risk warmup runs first; at the clustering epoch the shallow
//! class-token features of every training image are clustered once into
//! pseudo-domains. From then on each pseudo-domain owns a prompt generated
//! from a shared prompt and a rank-one factor pair, images are mixed across
//! pseudo-domains, and an adapter learns to blend the domain prompts for
//! images from unseen domains.
//!
//! Module map:
//!
//! * [`backbone`]: the encoder, with prompt insertion and per-layer class-token
//!   extraction, and hand-written reverse-mode gradients.
//! * [`discovery`]: style-feature collection, k-means, pseudo-domain
//!   assignment and NMI diagnostics.
//! * [`prompts`]: the domain prompt generator and the weighting adapter.
//! * [`objectives`]: domain, mixup and weighted losses.
//! * [`trainer`]: warmup, one-time clustering, prompt training, selection.
//! * [`data`]: datasets, image-folder loading and the synthetic trap generator.
//! * [`evalkit`]: metrics, Frechet distance, prompt-weight analysis, plots.
//! * [`experiments`]: the seeded sweeps used by the benchmark command.

pub mod backbone;
pub mod data;
pub mod discovery;
pub mod error;
pub mod evalkit;
pub mod experiments;
pub mod objectives;
pub mod prompts;
pub mod trainer;
pub mod util;

pub use error::{PldgError, Result};
