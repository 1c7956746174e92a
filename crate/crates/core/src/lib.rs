//! Analytical modeling and design-space exploration for LLM serving on
//! heterogeneous 3D-DRAM chiplet systems.
//!
//! The crate is layered bottom-up: [`hwspec`] describes hardware,
//! [`memmodel`], [`compmodel`] and [`commmodel`] cost individual operations,
//! [`d3flow`] picks intra-PE dataflows, [`parmap`] maps the model onto the PE
//! mesh, [`servesim`] replays request traces, [`thermal`] closes the
//! temperature loop, and [`dse`] searches over all of it.

// Negated float comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commmodel;
pub mod compmodel;
pub mod d3flow;
pub mod dse;
pub mod hwspec;
pub mod memmodel;
pub mod parmap;
pub mod servesim;
pub mod thermal;
pub mod util;
pub mod workload;
