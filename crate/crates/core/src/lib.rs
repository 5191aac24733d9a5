#![no_std]

extern crate alloc;

pub mod data;
pub mod decoding;
pub mod evalframeworks;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod tokenizer;
pub mod training;
pub mod vision;
