//! The book's chapters as doc-tests, so every snippet compiles and runs.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/running.md")]
pub mod running {}
#[doc = include_str!("../../../book/src/scenarios.md")]
pub mod scenarios {}
#[doc = include_str!("../../../book/src/schemes.md")]
pub mod schemes {}
#[doc = include_str!("../../../book/src/fairness.md")]
pub mod fairness {}
#[doc = include_str!("../../../book/src/credit.md")]
pub mod credit {}
#[doc = include_str!("../../../book/src/policing.md")]
pub mod policing {}
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("../../../book/src/acceptance.md")]
pub mod acceptance {}
