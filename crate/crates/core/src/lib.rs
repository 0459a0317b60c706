//! Knowledge graph storage, tokenization, knowledge-injection masking and
//! curriculum corpus generation.

pub mod audit;
pub mod curriculum;
pub mod injection;
pub mod kg;
pub mod seed;
pub mod tokenizer;
