#![allow(dead_code)]

pub mod gradcases;
pub mod gradcheck;
pub mod checks;
pub mod oracles;
pub mod training;
