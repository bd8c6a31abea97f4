//! Controllable image captioning agent.
//!
//! The pipeline has two halves. [`evolver`] turns a short user request into a
//! professional instruction carrying a machine-checkable
//! [`constraints::ConstraintSpec`], optionally grounded by web context from
//! [`context`]. [`agent`] then runs a thought/action/observation loop over the
//! caption-control [`tools`], with few-shot chains picked by [`retrieval`],
//! until the caption passes the deterministic constraint checks.
//!
//! Every model and web dependency sits behind the traits in [`backends`] and
//! [`context`], each with HTTP, fixture and cassette implementations, so the
//! whole pipeline runs offline and replays byte-for-byte.

pub mod agent;
pub mod backends;
pub mod config;
pub mod constraints;
pub mod context;
pub mod dsl;
pub mod evolver;
pub mod judge;
pub mod model;
pub mod prompts;
pub mod retrieval;
pub mod text;
pub mod tools;
pub mod trace;
pub mod vision;

pub use model::{Caption, EvolvedInstruction, ImageRef, Instruction, Trace};

#[cfg(test)]
pub(crate) mod testutil {
    use crate::model::ImageRef;

    /// Smallest byte string that sniffs as PNG.
    pub fn png() -> ImageRef {
        ImageRef::from_bytes(b"\x89PNG\r\n\x1a\n\0".to_vec()).unwrap()
    }
}
