//! Multi-robot navigation in 2D polygonal worlds: simulation, shaped rewards,
//! a small convolutional policy network, on-policy and value-based trainers,
//! and a grid A* baseline.

pub mod astar;
pub mod geometry;
pub mod harness;
pub mod net;
pub mod reward;
pub mod rng;
pub mod sim;
pub mod train;
pub mod world;
