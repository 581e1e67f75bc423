//! Scenario simulation: ground truth on a route network, AIS streams and
//! sensor scans.

mod extent;
mod scenario;

pub use extent::{feature_dataset, sample_extent, SizeGroup, LOG_SIZE_SIGMA};
pub use scenario::{
    emit_ais, emit_detections, emit_sensor_detections, generate_truth, AisSpec, AnomalySpec, DarkPeriod, DynamicsSpec,
    GroundTruth, OuSpec, ScenarioConfig, ScheduledWaypoint, SimSensor, VesselSpec, VesselTruth, WaypointSpec,
};
