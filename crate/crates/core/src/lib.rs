//! Literature-based discovery over temporal concept co-occurrence graphs:
//! candidate path generation, contrastive attention ranking of evidence paths,
//! and validator-driven explanation refinement.

pub mod cli;
pub mod embed;
pub mod expl;
pub mod ireval;
pub mod kgraph;
pub mod pathgen;
pub mod pipeline;
pub mod ranker;
pub mod seed;
pub mod synth;
