//! Reverse-mode automatic differentiation and the model pieces built on it.

pub mod gcn;
pub mod gradcheck;
pub mod ops;
pub mod optim;
pub mod tape;

pub use gcn::{gcn_forward, GcnParams, GcnVars};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use optim::{riemannian_update, Adam, RiemannianAdam, RiemannianState};
pub use tape::{Gradients, Tape, Var};
