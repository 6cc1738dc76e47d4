//! Volatility matrix prediction for large asset panels observed at high
//! frequency.
//!
//! The pipeline runs in five stages: simulate or load a tick panel
//! ([`sim`]), estimate daily integrated volatility matrices ([`rv`]), split
//! them into factor and idiosyncratic eigenvalue series ([`poet`]), fit a
//! robust sparse VAR on those series ([`robustvar`]), and forecast the next
//! day's matrix ([`forecast`]). [`eval`] runs rolling backtests and
//! simulation studies on top.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod forecast;
pub mod io;
pub mod matutil;
pub mod poet;
pub mod robustvar;
pub mod rv;
pub mod sim;

pub use error::{FivarError, Result};
