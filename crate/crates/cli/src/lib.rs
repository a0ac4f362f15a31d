//! Configuration-driven front end tying the pricing and verification engines
//! together.

pub mod commands;
pub mod config;
pub mod io;
pub mod transform;
pub mod verify;
