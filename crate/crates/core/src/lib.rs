//! Hierarchical bigraph neural network (HBGNN) rating recommender.
//!
//! A user and an item are each represented by a fully connected *link graph*
//! whose nodes hold embeddings of categorical features. A round of GRU
//! message passing (optionally attention-weighted) mixes the features, an
//! encoder collapses each link graph into a node of the two-node *place
//! graph*, one more round of message passing exchanges information across
//! the port between them, and an MLP reads the two place states out as a
//! rating.
//!
//! The crate carries its own small reverse-mode autodiff engine
//! ([`autodiff`]), layer primitives ([`nn`]), the graph levels
//! ([`bigraph`]), the assembled model ([`model`]), the optimizer
//! ([`optim`]), MovieLens ingestion ([`data`]) and training, checkpointing
//! and transfer ([`train`]).

pub mod autodiff;
pub mod bigraph;
pub mod cli;
pub mod data;
pub mod model;
pub mod nn;
pub mod optim;
pub mod train;

mod error;

pub use error::{Error, Result};
