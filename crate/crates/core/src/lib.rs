//! Reference-game language grounding over view embeddings and voxel factors.
//!
//! A two-branch scorer for a pairwise object reference game: one branch fuses
//! a sentence embedding with pooled view embeddings, the other runs a
//! cross-modal transformer over word embeddings and the 12 rank-1 factors of
//! a predicted voxel map. A small MLP scores the pair of branch outputs.

pub mod dataset;
pub mod features;
pub mod voxel;
pub mod evaluation;
pub mod model;
pub mod training;
pub mod cli;
