//! Helpers shared by several test targets.
#![allow(dead_code)]

pub mod gradcheck;
pub mod oracles;
