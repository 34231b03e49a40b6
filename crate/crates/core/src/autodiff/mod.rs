//! Reverse-mode automatic differentiation over rank-2 `f64` arrays.
//!
//! Graphs are built define-by-run on a [`Tape`]: each op computes its value
//! immediately and records its parents. [`Tape::backward`] sweeps the tape in
//! reverse and accumulates gradients over every path to each trainable leaf.
//! A fresh tape is built per training iteration.
//!
//! ```
//! use stylecycle::autodiff::Tape;
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(1, 1, vec![3.0]).unwrap();
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap(), &[6.0]);
//! ```

pub mod check;
mod linalg;
mod tape;

pub use check::{finite_diff_check, FdOptions, FdReport, LeafSpec};
pub use tape::{Gradients, OpKind, Tape, Var};
