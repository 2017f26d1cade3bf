pub mod catalog;
pub mod corpus;
pub mod desk;
pub mod dialogue;
pub mod eval;
pub mod gateway;
pub mod jsonl;
pub mod rationale;
pub mod text;
pub mod training;
