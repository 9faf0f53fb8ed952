//! Situational-graph LiDAR SLAM: keyframes, planar walls, rooms and floors
//! in one jointly optimized factor graph, plus a deterministic indoor LiDAR
//! simulator and trajectory/map evaluation.

pub mod config;
pub mod eval;
pub mod freespace;
pub mod geometry;
pub mod graph;
pub mod loop_closure;
pub mod perception;
pub mod pipeline;
pub mod scene;
pub mod simulator;
pub mod spatial;
pub mod trajectory;
