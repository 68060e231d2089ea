pub mod hazard;
pub mod rng;
pub mod swarm;
pub mod world;
pub mod metrics;
pub mod sim;
pub mod sagat;
pub mod sart;
pub mod session;
pub mod stats;
pub mod intervention;
pub mod synthetic;
