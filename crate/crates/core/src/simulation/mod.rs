pub mod batch;
pub mod dgp;
pub mod rng;
