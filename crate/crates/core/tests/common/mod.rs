#![allow(dead_code)]

pub mod exact;
pub mod grad;
pub mod magic;
pub mod posterior;
pub mod stats;
