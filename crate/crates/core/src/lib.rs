#![no_std]

extern crate alloc;

pub mod arith;
pub mod data;
pub mod disparity;
pub mod fixedpoint;
pub mod logreg;
pub mod paillier;
pub mod protocol;
pub mod secagg;
pub mod shamir;
pub mod zkpopk;
