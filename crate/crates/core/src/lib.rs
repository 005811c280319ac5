pub mod classifier;
pub mod embedder;
pub mod exec;
pub mod harness;
pub mod lex;
pub mod mutate;
pub mod predictor;
pub mod semantics;
