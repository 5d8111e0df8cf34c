//! Perturbation-based auditing of legal judgment prediction models.
//!
//! The crate turns a span-annotated corpus of case facts into occlusion and
//! lower-court-insertion test suites, scores a classifier's confidence shifts
//! against the annotations, and measures agreement between annotators.

pub mod agreement;
pub mod corpus;
pub mod gateway;
pub mod metrics;
pub mod perturb;
pub mod pipeline;
pub mod report;
pub mod synth;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/occlusion.md")]
    mod occlusion {}
    #[doc = include_str!("../../../book/src/lci.md")]
    mod lci {}
    #[doc = include_str!("../../../book/src/scoring.md")]
    mod scoring {}
    #[doc = include_str!("../../../book/src/calibration.md")]
    mod calibration {}
    #[doc = include_str!("../../../book/src/agreement.md")]
    mod agreement {}
    #[doc = include_str!("../../../book/src/model-service.md")]
    mod model_service {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
