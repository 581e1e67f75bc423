//! Multisensor multitarget particle tracker with sum-product data
//! association, switching motion models, MMSI label fusion and class-aided
//! updates.
//!
//! Each scan (one sensor, one timestamp) runs predict → association weights
//! → message passing → update → birth → prune. AIS messages are processed as
//! single-measurement scans.

mod association;
mod filter;
mod sensor;
mod target;

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use association::{spa_associate, AssociationProblem, Marginals};
pub use filter::{association_weights, birth, predict, route_model_set, systematic_resample, update, BirthConfig, ScanEvidence};
pub use sensor::{
    parse_sensor_config, Measurement, MeasurementBody, MeasurementNoise, NoiseSpec, SensorModel, SensorSpec,
    DEFAULT_NEW_TARGET_DENSITY,
};
pub use target::{estimate, prune, LabelDist, PotentialTarget, TrackEstimate};

use crate::error::{Error, Result};
use crate::geo::LocalFrame;
use crate::io::{AisRecord, Detection, Mmsi};
use crate::kinematics::{DynamicModel, ModelSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub n_particles: usize,
    /// Probability that a target survives one hour.
    pub survival_per_hour: f64,
    pub r_detect: f64,
    pub r_prune: f64,
    pub max_iter: usize,
    pub tol: f64,
    /// Resample when the effective sample size drops below this fraction.
    pub resample_ratio: f64,
    pub birth: BirthConfig,
    /// NCV noise intensity (m²/s³) of the default and fallback model.
    pub ncv_q: f64,
    /// Route OU reversion rate (1/s) and noise intensity.
    pub route_theta: f64,
    pub route_sigma: f64,
    /// Self-transition probability of the model switching chain.
    pub stickiness: f64,
    /// Sensor id used for AIS messages.
    pub ais_sensor: String,
    pub seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            n_particles: 1000,
            survival_per_hour: 0.999,
            r_detect: 0.5,
            r_prune: 1e-3,
            max_iter: 100,
            tol: 1e-6,
            resample_ratio: 0.5,
            birth: BirthConfig::default(),
            ncv_q: 1e-3,
            route_theta: 1e-3,
            route_sigma: 0.05,
            stickiness: 0.95,
            ais_sensor: "ais".into(),
            seed: 0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::config("n_particles must be positive"));
        }
        if !(0.0 < self.r_prune && self.r_prune < self.r_detect && self.r_detect <= 1.0) {
            return Err(Error::config("need 0 < r_prune < r_detect <= 1"));
        }
        if !(self.survival_per_hour > 0.0 && self.survival_per_hour <= 1.0) {
            return Err(Error::config("survival_per_hour must lie in (0, 1]"));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::config("tol must be > 0 and max_iter >= 1"));
        }
        Ok(())
    }
}

/// Measurements from one sensor at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub t: f64,
    pub sensor_id: String,
    pub measurements: Vec<Measurement>,
}

/// Orders inputs into scans: detections grouped by (time, sensor), each AIS
/// message on its own. Ties in time keep detections before AIS.
pub fn build_scans(ais: &[AisRecord], detections: &[Detection], frame: &LocalFrame, ais_sensor: &str) -> Vec<Scan> {
    let mut grouped: BTreeMap<(u64, String), Vec<Measurement>> = BTreeMap::new();
    for d in detections {
        grouped
            .entry((time_key(d.t), d.sensor_id.clone()))
            .or_default()
            .push(Measurement::from_detection(d, frame));
    }
    let mut scans: Vec<Scan> = grouped
        .into_iter()
        .map(|((_, sensor_id), measurements)| Scan {
            t: measurements[0].t,
            sensor_id,
            measurements,
        })
        .collect();
    scans.extend(ais.iter().map(|r| Scan {
        t: r.t,
        sensor_id: ais_sensor.to_string(),
        measurements: vec![Measurement::from_ais(r, frame)],
    }));
    scans.sort_by(|a, b| a.t.total_cmp(&b.t));
    scans
}

/// Order-preserving integer key for a finite float.
fn time_key(t: f64) -> u64 {
    let bits = t.to_bits();
    if t.is_sign_negative() {
        !bits
    } else {
        bits | (1 << 63)
    }
}

/// Per-scan summary returned by [`Tracker::process`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScanReport {
    pub t: f64,
    pub sensor_id: String,
    pub converged: bool,
    pub iterations: usize,
    pub births: usize,
    pub estimates: Vec<TrackEstimate>,
}

/// Sequential tracker state.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    sensors: BTreeMap<String, SensorModel>,
    model_set: ModelSet,
    frame: LocalFrame,
    targets: Vec<PotentialTarget>,
    clock: Option<f64>,
    next_id: u64,
    labels: BTreeSet<Mmsi>,
    rng: ChaCha8Rng,
}

impl Tracker {
    /// `model_set` defaults to a single NCV model.
    pub fn new(
        cfg: TrackerConfig,
        sensors: &BTreeMap<String, SensorSpec>,
        frame: LocalFrame,
        model_set: Option<ModelSet>,
    ) -> Result<Self> {
        cfg.validate()?;
        let sensors = sensors
            .iter()
            .map(|(id, spec)| Ok((id.clone(), SensorModel::from_spec(id, spec, &frame)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let model_set = model_set.unwrap_or_else(|| ModelSet::single(DynamicModel::Ncv { q: cfg.ncv_q }));
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            sensors,
            model_set,
            frame,
            targets: Vec::new(),
            clock: None,
            next_id: 0,
            labels: BTreeSet::new(),
        })
    }

    pub fn frame(&self) -> &LocalFrame {
        &self.frame
    }

    pub fn targets(&self) -> &[PotentialTarget] {
        &self.targets
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn estimates(&self) -> Vec<TrackEstimate> {
        estimate(&self.targets, self.cfg.r_detect, self.clock.unwrap_or(0.0))
    }

    /// Processes one scan. Scans must arrive in nondecreasing time order.
    pub fn process(&mut self, scan: &Scan) -> Result<ScanReport> {
        let sensor = self
            .sensors
            .get(&scan.sensor_id)
            .ok_or_else(|| Error::config(format!("no sensor model for {:?}", scan.sensor_id)))?;
        if let Some(clock) = self.clock {
            if scan.t < clock {
                return Err(Error::OutOfSequence { scan_t: scan.t, clock_t: clock });
            }
            let dt = scan.t - clock;
            if dt > 0.0 && !self.targets.is_empty() {
                let ps = self.cfg.survival_per_hour.powf(dt / 3600.0);
                predict(&mut self.targets, &self.model_set, dt, ps, &mut self.rng)?;
            }
        }
        self.clock = Some(scan.t);
        self.labels.extend(scan.measurements.iter().filter_map(|z| z.mmsi));
        let n_labels = self.labels.len();

        let evidence = association_weights(&self.targets, &scan.measurements, sensor, n_labels)?;
        let marginals = spa_associate(&evidence.problem, self.cfg.max_iter, self.cfg.tol);
        update(
            &mut self.targets,
            &scan.measurements,
            sensor,
            &evidence,
            &marginals,
            n_labels,
            self.cfg.resample_ratio,
            scan.t,
            &mut self.rng,
        );
        let born = birth(
            &scan.measurements,
            &marginals.non_target,
            sensor,
            &self.cfg.birth,
            self.model_set.len(),
            self.cfg.n_particles,
            &mut self.next_id,
            &mut self.rng,
        );
        let births = born.len();
        self.targets.extend(born);
        self.targets = prune(std::mem::take(&mut self.targets), self.cfg.r_prune);
        Ok(ScanReport {
            t: scan.t,
            sensor_id: scan.sensor_id.clone(),
            converged: marginals.converged,
            iterations: marginals.iterations,
            births,
            estimates: self.estimates(),
        })
    }

    /// Runs every scan in order and collects the reports.
    pub fn run(&mut self, scans: &[Scan]) -> Result<Vec<ScanReport>> {
        scans.iter().map(|s| self.process(s)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoPosition;
    use crate::io::{DetectionBody, Mmsi};
    use nalgebra::Vector2;

    fn frame() -> LocalFrame {
        LocalFrame::new(GeoPosition::new(36.0, 14.0).unwrap())
    }

    fn ais_spec() -> SensorSpec {
        SensorSpec {
            pd: 0.3,
            clutter_rate: 0.0,
            fov: None,
            noise: NoiseSpec::Geofix { sigma_m: Some(20.0), cov: None },
            confusion: None,
            label_error: Some(0.0),
            velocity_sigma_mps: Some(0.5),
            new_target_density: Some(1e-12),
            birth_existence: Some(0.9),
        }
    }

    fn ais(t: f64, mmsi: u64, xy: Vector2<f64>, v: Vector2<f64>) -> AisRecord {
        AisRecord {
            t,
            mmsi: Some(Mmsi::new(mmsi).unwrap()),
            pos: frame().from_local(&xy).unwrap(),
            sog: Some(v.norm()),
            cog: Some(crate::geo::course_of(&v)),
            ship_type: None,
            length: None,
            width: None,
        }
    }

    fn tracker() -> Tracker {
        let sensors = BTreeMap::from([("ais".to_string(), ais_spec())]);
        let cfg = TrackerConfig {
            n_particles: 300,
            ..Default::default()
        };
        Tracker::new(cfg, &sensors, frame(), None).unwrap()
    }

    #[test]
    fn out_of_sequence_rejected() {
        let mut t = tracker();
        let scans = build_scans(&[ais(10.0, 1, Vector2::zeros(), Vector2::new(5.0, 0.0))], &[], &frame(), "ais");
        t.process(&scans[0]).unwrap();
        let mut early = scans[0].clone();
        early.t = 5.0;
        assert!(matches!(t.process(&early), Err(Error::OutOfSequence { .. })));
    }

    #[test]
    fn unknown_sensor_is_a_config_error() {
        let mut t = tracker();
        let scan = Scan { t: 0.0, sensor_id: "sonar".into(), measurements: vec![] };
        assert!(matches!(t.process(&scan), Err(Error::Config(_))));
    }

    #[test]
    fn ais_only_labels_are_exact_after_two_messages() {
        let mut t = tracker();
        let v1 = Vector2::new(5.0, 0.0);
        let v2 = Vector2::new(0.0, -4.0);
        let p2 = Vector2::new(20_000.0, 30_000.0);
        let mut records = Vec::new();
        for i in 0..6 {
            let s = i as f64 * 60.0;
            records.push(ais(s, 247_000_001, v1 * s, v1));
            records.push(ais(s + 30.0, 247_000_002, p2 + v2 * (s + 30.0), v2));
        }
        let reports = t.run(&build_scans(&records, &[], &frame(), "ais")).unwrap();
        for r in &reports[4..] {
            assert_eq!(r.estimates.len(), 2);
            for e in &r.estimates {
                let want = if e.pos.x < 10_000.0 { 247_000_001 } else { 247_000_002 };
                assert_eq!(e.mmsi, Some(Mmsi::new(want).unwrap()));
            }
        }
        for k in t.targets() {
            assert!(k.is_consistent());
        }
    }

    #[test]
    fn scans_group_detections() {
        let d = |t: f64, s: &str| Detection {
            t,
            sensor_id: s.into(),
            body: DetectionBody::GeoFix(GeoPosition::new(36.0, 14.0).unwrap()),
            extent: None,
            class_scores: None,
        };
        let dets = [d(5.0, "sar"), d(5.0, "sar"), d(5.0, "radar"), d(1.0, "sar")];
        let scans = build_scans(&[ais(3.0, 1, Vector2::zeros(), Vector2::zeros())], &dets, &frame(), "ais");
        let summary: Vec<(f64, &str, usize)> = scans.iter().map(|s| (s.t, s.sensor_id.as_str(), s.measurements.len())).collect();
        assert_eq!(summary, [(1.0, "sar", 1), (3.0, "ais", 1), (5.0, "radar", 1), (5.0, "sar", 2)]);
    }
}
