//! Gendered pronoun resolution: a pronoun-token baseline classifier and an
//! evidence-pooling classifier over coreference clusters, with the data
//! pipeline, training/ensembling harness, scorer and review service.

pub mod cli;
pub mod data;
pub mod evidence;
pub mod manifest;
pub mod model;
pub mod service;
pub mod tensor;
pub mod train;
