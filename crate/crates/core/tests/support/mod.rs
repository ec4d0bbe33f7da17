pub mod programs;
pub mod rk4;
pub mod stats;
