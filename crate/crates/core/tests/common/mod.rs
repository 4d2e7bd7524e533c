#![allow(dead_code)]

pub mod calib;
pub mod scenario;
