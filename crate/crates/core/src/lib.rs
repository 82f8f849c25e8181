//! Formal-language rule extrapolation laboratory.
//!
//! Six languages defined as intersections of two rules, small autoregressive
//! sequence models trained on them, exact chance-level oracles for the
//! rule-following metrics, training-dynamics probes and a computable Bayesian
//! mixture over total next-token machines.

pub mod data;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod grammar;
pub mod model;
pub mod normative;
pub mod seed;
pub mod token;

pub use error::{Error, Result};
pub use grammar::{Category, Language, Rule};
pub use token::Token;
