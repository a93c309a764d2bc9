//! Simulation and exact degrees-of-freedom regions for the two-user MIMO
//! interference channel with a cognitive relay under delayed feedback.

pub mod channel_model;
pub mod decoder;
pub mod dof_regions;
pub mod montecarlo;
pub mod numerics;
pub mod schemes;
