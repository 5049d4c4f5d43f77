//! Library surface of the preflab experiment runner; the binary in
//! `main.rs` is a thin argument-parsing wrapper over [`commands`].

pub mod commands;
pub mod plot;
