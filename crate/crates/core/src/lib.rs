//! Prompt learning with pseudo-labeled demonstrations for black-box
//! classifiers.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod confidence;
pub mod demos;
pub mod error;
pub mod gateway;
pub mod optimizer;
pub mod pipeline;
pub mod policy;
pub mod synthetic;
pub mod util;
pub mod vocab;

pub use error::{Error, GatewayError, Result};
pub use gateway::{Fields, Gateway, LabelSpace, TaskTemplate};
pub use policy::{Prompt, PromptPolicy, TokenDistribution, Vocabulary};
