//! Certified patch defense by band ablation with a small vision transformer.
//!
//! The crate is organised bottom-up: [`tensor`] (autodiff), [`data`],
//! [`smoothing`], [`vit`], [`tokenizer`], [`psim`] (training curriculum),
//! [`certify`] and [`oracle`] (brute-force validators).

pub mod certify;
pub mod data;
pub mod error;
pub mod oracle;
pub mod psim;
pub mod smoothing;
pub mod tensor;
pub mod tokenizer;
pub mod vit;

pub use error::{Error, Result};
