//! Maritime traffic graph extraction from historical tracks.
//!
//! The pipeline is: per-track velocity series → change-point waypoints →
//! DBSCAN waypoint clusters → directed graph of cluster-to-cluster transits →
//! pruning and merging.

mod dbscan;
mod graph;
mod waypoints;

pub use dbscan::{dbscan, DbscanResult};
pub use graph::{
    build_graph, prune_and_merge, GraphDocument, LegStats, TrafficEdge, TrafficGraph, TrafficNode,
};
pub use waypoints::{
    cluster_waypoints, detect_waypoints, velocity_sequence, ClusterParams, Clustering, Region,
    Waypoint, WaypointCluster, WaypointConfig, WaypointKind,
};
