#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod ambiguity;
pub mod conic;
pub mod drocp;
pub mod error;
pub mod experiments;
pub mod learner;
pub mod markov;
pub mod model;
pub mod mpc;
pub mod risk;
pub mod rng;
pub mod terminal;
pub mod tree;
