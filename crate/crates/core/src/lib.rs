pub mod analysis;
pub mod dynamics;
pub mod gain;
pub mod scenario;
pub mod signed_graph;
pub mod simulator;
pub mod spectral;
pub mod verify;
