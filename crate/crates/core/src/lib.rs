//! Shift projection and multilingual contrastive alignment over transformer hidden states.
//!
//! The crate is organised bottom-up:
//!
//! - [`numkit`]: dense fp64 linear algebra (Jacobi SVD, Cholesky, SPD pencils).
//! - [`repstore`]: the `.shfc` binary container, activation dumps and pooling.
//! - [`geometry`]: language vectors, language subspaces and their Riemannian
//!   distance, layer-area selection, the online vector estimator, and LDA.
//! - [`toymodel`]: synthetic multilingual corpus and a tiny decoder-only transformer
//!   with hidden-state hooks and exact reverse-mode gradients.
//! - [`intervention`]: shift-toward / shift-backward hooks driven by a [`intervention::ShiftPlan`].
//! - [`training`]: autoregressive and contrastive losses, gradient checking, and the
//!   two-stage trainer.
//! - [`eval`] and [`pipeline`]: evaluation metrics and the end-to-end commands behind the CLI.

pub mod error;
pub mod eval;
pub mod geometry;
pub mod intervention;
pub mod lang;
pub mod numkit;
pub mod pipeline;
pub mod repstore;
pub mod toymodel;
pub mod training;

pub use error::{Error, Result};
pub use lang::LangId;
