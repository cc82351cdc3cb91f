//! Decision-region compression of batch trajectories.
//!
//! The pipeline learns a weighted Gaussian kernel that predicts behavior
//! actions, flags *decision points* (states whose kernel neighbors support
//! more than one action), clusters them into decision regions, compresses
//! every trajectory into a walk over those regions, and then plans and
//! evaluates policies on the resulting small MDP.

pub mod compression;
pub mod data;
pub mod decision_points;
pub mod forest;
pub mod kernel;
pub mod linkage;
pub mod metrics;
pub mod neighbors;
pub mod ope;
pub mod planning;
pub mod regions;
pub mod standardize;
pub mod synth;
