pub mod behavior;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod ndiff;
pub mod pipeline;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/behavior-paths.md")]
    mod behavior_paths {}
    #[doc = include_str!("../../../book/src/compute-core.md")]
    mod compute_core {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
