//! Gain synthesis and simulation of fully distributed adaptive
//! output-feedback time-varying formation control for identical linear
//! agents, from undirected to directed graphs and from leaderless
//! stabilisation to tracking a leader with bounded input.

pub mod export;
pub mod fixtures;
pub mod formation;
pub mod graph;
pub mod linalg;
pub mod protocols;
pub mod scenario;
pub mod sim;
pub mod synthesis;
pub mod vehicle;
