// Negated float comparisons are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod flow;
pub mod io;
pub mod linalg;
pub mod passivity;
pub mod pipeline;
pub mod plant;
pub mod plot;
pub mod polytope;
pub mod region;
