//! Longitudinal patch-evolution prediction and atlas-based classification
//! on 3-D intensity volumes.

pub mod classify;
pub mod cohort;
pub mod config;
pub mod error;
pub mod landmarks;
pub mod linalg;
pub mod mkml;
pub mod persist;
pub mod pipeline;
pub mod ranking;
pub mod report;
pub mod rng;
pub mod sas;
pub mod similarity;
pub mod svm;
pub mod svr;
pub mod synth;
pub mod trajectory;
pub mod volume;

pub use error::{Error, Result};

// The guide's snippets run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/cohorts.md")]
    mod cohorts {}
    #[doc = include_str!("../../../book/src/landmarks.md")]
    mod landmarks {}
    #[doc = include_str!("../../../book/src/disparities.md")]
    mod disparities {}
    #[doc = include_str!("../../../book/src/sas.md")]
    mod sas {}
    #[doc = include_str!("../../../book/src/mkml.md")]
    mod mkml {}
    #[doc = include_str!("../../../book/src/prediction.md")]
    mod prediction {}
    #[doc = include_str!("../../../book/src/classification.md")]
    mod classification {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
