use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Vector2, Vector4};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::extent::sample_extent;
use crate::category::{VesselCategory, NUM_CATEGORIES};
use crate::category::ClassDistribution;
use crate::error::{Error, Result};
use crate::geo::{course_of, GeoPosition, LocalFrame};
use crate::io::{AisRecord, Detection, DetectionBody, Extent, Mmsi, TruthPoint};
use crate::kinematics::{DynamicModel, LinearTransition, OuParams};
use crate::tracker::{MeasurementNoise, SensorModel, SensorSpec};
use crate::traffic::GraphDocument;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaypointSpec {
    pub name: String,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuSpec {
    pub theta: f64,
    pub sigma: f64,
}

/// Velocity dynamics: a global default with optional per-class overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsSpec {
    pub theta: f64,
    pub sigma: f64,
    pub per_class: BTreeMap<VesselCategory, OuSpec>,
}

impl Default for DynamicsSpec {
    fn default() -> Self {
        Self {
            theta: 0.01,
            sigma: 0.05,
            per_class: BTreeMap::new(),
        }
    }
}

impl DynamicsSpec {
    fn for_class(&self, c: VesselCategory) -> OuSpec {
        self.per_class.get(&c).copied().unwrap_or(OuSpec {
            theta: self.theta,
            sigma: self.sigma,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VesselSpec {
    /// Defaults to `247000000 + index + 1`.
    #[serde(default)]
    pub mmsi: Option<Mmsi>,
    pub class: VesselCategory,
    /// Waypoint names in visiting order; at least two.
    pub route: Vec<String>,
    pub speed_mps: f64,
    #[serde(default)]
    pub start_s: f64,
    #[serde(default)]
    pub ship_type: Option<u16>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DarkPeriod {
    pub start_s: f64,
    pub duration_s: f64,
    /// Vessel index; all vessels when absent.
    #[serde(default)]
    pub vessel: Option<usize>,
}

impl DarkPeriod {
    fn covers(&self, vessel: usize, t: f64) -> bool {
        self.vessel.is_none_or(|v| v == vessel) && t >= self.start_s && t < self.start_s + self.duration_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AisSpec {
    /// Mean time between messages, s.
    pub mean_interval_s: f64,
    /// Every gap is `min_interval_s` plus an exponential excess, so the mean
    /// gap stays `mean_interval_s`.
    #[serde(default)]
    pub min_interval_s: f64,
    #[serde(default)]
    pub position_noise_m: f64,
    #[serde(default)]
    pub dark_periods: Vec<DarkPeriod>,
    #[serde(default)]
    pub mmsi_dropout: f64,
    #[serde(default)]
    pub mislabel: f64,
    #[serde(default = "yes")]
    pub report_dimensions: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSensor {
    pub sensor_id: String,
    /// Explicit scan times, s.
    #[serde(default)]
    pub epochs_s: Vec<f64>,
    /// Regular scans every `every_s` from `start_s` (added to `epochs_s`).
    #[serde(default)]
    pub every_s: Option<f64>,
    #[serde(default)]
    pub start_s: f64,
    /// `[lat, lon]`; required for range/bearing sensors.
    #[serde(default)]
    pub position: Option<[f64; 2]>,
    /// Log-normal relative noise on reported length and width.
    #[serde(default = "default_extent_noise")]
    pub extent_noise: f64,
    pub model: SensorSpec,
}

fn default_extent_noise() -> f64 {
    0.05
}

impl SimSensor {
    /// Sorted scan epochs within `[0, duration]`.
    pub fn epochs(&self, duration: f64) -> Vec<f64> {
        let mut out = self.epochs_s.clone();
        if let Some(every) = self.every_s {
            let mut t = self.start_s;
            while t <= duration {
                out.push(t);
                t += every;
            }
        }
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalySpec {
    pub vessel: usize,
    pub t_s: f64,
    pub duration_s: f64,
    /// Added to the route velocity, east/north m/s.
    pub delta_mps: [f64; 2],
}

/// A complete simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    pub duration_s: f64,
    /// `[lat, lon]` of the local frame; the first waypoint when absent.
    #[serde(default)]
    pub origin: Option<[f64; 2]>,
    #[serde(default)]
    pub waypoints: Vec<WaypointSpec>,
    /// Allowed legs as `[from, to]` names. When given, every route must
    /// follow them.
    #[serde(default)]
    pub edges: Option<Vec<[String; 2]>>,
    /// Alternative to `waypoints`/`edges`: nodes are named by their id.
    #[serde(default)]
    pub graph: Option<GraphDocument>,
    #[serde(default)]
    pub dynamics: DynamicsSpec,
    pub vessels: Vec<VesselSpec>,
    #[serde(default)]
    pub ais: Option<AisSpec>,
    #[serde(default)]
    pub sensors: Vec<SimSensor>,
    #[serde(default)]
    pub anomalies: Vec<AnomalySpec>,
}

fn prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::validation(format!("{name} must lie in [0, 1], got {p}")))
    }
}

fn nonneg(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(format!("{name} must be finite and >= 0, got {v}")))
    }
}

/// Resolved scenario geometry.
struct Layout {
    frame: LocalFrame,
    names: Vec<String>,
    xy: Vec<Vector2<f64>>,
    routes: Vec<Vec<usize>>,
}

impl ScenarioConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn waypoint_list(&self) -> Result<(Vec<WaypointSpec>, Option<Vec<[String; 2]>>)> {
        match &self.graph {
            Some(_) if !self.waypoints.is_empty() || self.edges.is_some() => {
                Err(Error::validation("give either a graph or waypoints/edges, not both"))
            }
            Some(g) => Ok((
                g.nodes
                    .iter()
                    .map(|n| WaypointSpec {
                        name: n.id.to_string(),
                        lat: n.lat,
                        lon: n.lon,
                    })
                    .collect(),
                Some(g.edges.iter().map(|e| [e.from.to_string(), e.to.to_string()]).collect()),
            )),
            None => Ok((self.waypoints.clone(), self.edges.clone())),
        }
    }

    fn layout(&self) -> Result<Layout> {
        let (wps, edges) = self.waypoint_list()?;
        if wps.is_empty() {
            return Err(Error::validation("scenario has no waypoints"));
        }
        let geo = wps
            .iter()
            .map(|w| GeoPosition::new(w.lat, w.lon))
            .collect::<Result<Vec<_>>>()?;
        let origin = match self.origin {
            Some([lat, lon]) => GeoPosition::new(lat, lon)?,
            None => geo[0],
        };
        let frame = LocalFrame::new(origin);
        let mut index = BTreeMap::new();
        for (i, w) in wps.iter().enumerate() {
            if index.insert(w.name.clone(), i).is_some() {
                return Err(Error::validation(format!("duplicate waypoint {:?}", w.name)));
            }
        }
        let lookup = |n: &String| {
            index
                .get(n)
                .copied()
                .ok_or_else(|| Error::validation(format!("unknown waypoint {n:?}")))
        };
        let allowed: Option<BTreeSet<(usize, usize)>> = edges
            .map(|es| es.iter().map(|[a, b]| Ok((lookup(a)?, lookup(b)?))).collect::<Result<_>>())
            .transpose()?;
        let mut routes = Vec::new();
        for (vi, v) in self.vessels.iter().enumerate() {
            if v.route.len() < 2 {
                return Err(Error::validation(format!("vessel {vi}: a route needs at least 2 waypoints")));
            }
            let r = v.route.iter().map(lookup).collect::<Result<Vec<_>>>()?;
            for leg in r.windows(2) {
                if leg[0] == leg[1] {
                    return Err(Error::validation(format!("vessel {vi}: route repeats a waypoint")));
                }
                if allowed.as_ref().is_some_and(|a| !a.contains(&(leg[0], leg[1]))) {
                    return Err(Error::validation(format!(
                        "vessel {vi}: route is disconnected, no edge {} -> {}",
                        wps[leg[0]].name, wps[leg[1]].name
                    )));
                }
            }
            routes.push(r);
        }
        Ok(Layout {
            xy: geo.iter().map(|g| frame.to_local(g)).collect(),
            names: wps.into_iter().map(|w| w.name).collect(),
            frame,
            routes,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::validation("duration_s must be positive"));
        }
        let layout = self.layout()?;
        let d = &self.dynamics;
        for o in std::iter::once(OuSpec { theta: d.theta, sigma: d.sigma }).chain(d.per_class.values().copied()) {
            if !(o.theta > 0.0 && o.theta.is_finite()) {
                return Err(Error::validation("dynamics theta must be positive"));
            }
            nonneg("dynamics sigma", o.sigma)?;
        }
        let mut mmsis = BTreeSet::new();
        for (i, v) in self.vessels.iter().enumerate() {
            if !(v.speed_mps > 0.0 && v.speed_mps.is_finite()) {
                return Err(Error::validation(format!("vessel {i}: speed must be positive")));
            }
            nonneg("start_s", v.start_s)?;
            if !mmsis.insert(vessel_mmsi(v, i)?) {
                return Err(Error::validation(format!("vessel {i}: duplicate mmsi")));
            }
        }
        if let Some(a) = &self.ais {
            if !(a.mean_interval_s > 0.0 && a.mean_interval_s.is_finite()) {
                return Err(Error::validation("ais mean_interval_s must be positive"));
            }
            nonneg("min_interval_s", a.min_interval_s)?;
            if a.min_interval_s >= a.mean_interval_s {
                return Err(Error::validation("ais min_interval_s must be below mean_interval_s"));
            }
            nonneg("position_noise_m", a.position_noise_m)?;
            prob("mmsi_dropout", a.mmsi_dropout)?;
            prob("mislabel", a.mislabel)?;
            for p in &a.dark_periods {
                nonneg("dark period start", p.start_s)?;
                nonneg("dark period duration", p.duration_s)?;
                if p.vessel.is_some_and(|v| v >= self.vessels.len()) {
                    return Err(Error::validation("dark period names an unknown vessel"));
                }
            }
        }
        let mut ids = BTreeSet::new();
        for s in &self.sensors {
            if !ids.insert(&s.sensor_id) {
                return Err(Error::validation(format!("duplicate sensor {:?}", s.sensor_id)));
            }
            let model = SensorModel::from_spec(&s.sensor_id, &s.model, &layout.frame)?;
            if matches!(model.noise, MeasurementNoise::RangeBearing { .. }) && s.position.is_none() {
                return Err(Error::validation(format!("sensor {:?}: range/bearing needs a position", s.sensor_id)));
            }
            if let Some([lat, lon]) = s.position {
                GeoPosition::new(lat, lon)?;
            }
            if let Some(e) = s.every_s {
                if !(e > 0.0) {
                    return Err(Error::validation("every_s must be positive"));
                }
            }
            nonneg("extent_noise", s.extent_noise)?;
            if s.epochs(self.duration_s).iter().any(|t| !(0.0..=self.duration_s).contains(t)) {
                return Err(Error::validation(format!("sensor {:?}: scan epochs outside the scenario", s.sensor_id)));
            }
        }
        for a in &self.anomalies {
            if a.vessel >= self.vessels.len() {
                return Err(Error::validation("anomaly names an unknown vessel"));
            }
            nonneg("anomaly t_s", a.t_s)?;
            nonneg("anomaly duration_s", a.duration_s)?;
            if !a.delta_mps.iter().all(|v| v.is_finite()) {
                return Err(Error::validation("anomaly delta must be finite"));
            }
        }
        drop(layout);
        Ok(())
    }

    /// The frame all local coordinates of this scenario refer to.
    pub fn frame(&self) -> Result<LocalFrame> {
        Ok(self.layout()?.frame)
    }

    /// MMSI of each vessel, defaults filled in.
    pub fn vessel_mmsis(&self) -> Result<Vec<Mmsi>> {
        self.vessels.iter().enumerate().map(|(i, v)| vessel_mmsi(v, i)).collect()
    }
}

fn vessel_mmsi(v: &VesselSpec, i: usize) -> Result<Mmsi> {
    match v.mmsi {
        Some(m) => Ok(m),
        None => Mmsi::new(247_000_001 + i as u64),
    }
}

/// Independent random stream per (purpose, index).
fn stream(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 32) | index);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledWaypoint {
    pub t: f64,
    pub name: String,
    pub pos: GeoPosition,
}

/// Ground truth of one vessel, sampled at 1 Hz from `t0`.
#[derive(Debug, Clone, PartialEq)]
pub struct VesselTruth {
    pub mmsi: Mmsi,
    pub class: VesselCategory,
    pub extent: Extent,
    pub ship_type: Option<u16>,
    pub t0: f64,
    /// `[px, py, vx, vy]` in the scenario frame.
    pub states: Vec<Vector4<f64>>,
    /// Arrival time at each route waypoint (departure for the first).
    pub schedule: Vec<ScheduledWaypoint>,
    pub anomalies: Vec<AnomalySpec>,
}

impl VesselTruth {
    pub fn t_end(&self) -> f64 {
        self.t0 + (self.states.len().saturating_sub(1)) as f64
    }

    pub fn is_active(&self, t: f64) -> bool {
        !self.states.is_empty() && t >= self.t0 && t <= self.t_end()
    }

    /// Linear interpolation between the 1 Hz samples.
    pub fn state_at(&self, t: f64) -> Option<Vector4<f64>> {
        if !self.is_active(t) {
            return None;
        }
        let s = t - self.t0;
        let i = (s.floor() as usize).min(self.states.len() - 1);
        if i + 1 >= self.states.len() {
            return Some(self.states[i]);
        }
        let a = s - i as f64;
        Some(self.states[i] * (1.0 - a) + self.states[i + 1] * a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub frame: LocalFrame,
    pub vessels: Vec<VesselTruth>,
}

impl GroundTruth {
    /// Every sample as on-disk truth points, ordered by time then MMSI.
    pub fn points(&self) -> Result<Vec<TruthPoint>> {
        let mut out = Vec::new();
        for v in &self.vessels {
            for (k, x) in v.states.iter().enumerate() {
                out.push(TruthPoint {
                    t: v.t0 + k as f64,
                    mmsi: v.mmsi,
                    class: v.class,
                    pos: self.frame.from_local(&Vector2::new(x[0], x[1]))?,
                    vel: Vector2::new(x[2], x[3]),
                });
            }
        }
        out.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.mmsi.cmp(&b.mmsi)));
        Ok(out)
    }
}

/// Piecewise-OU trajectories along each vessel's route.
///
/// The leg mean velocity points from the vessel's position at the start of
/// the leg to the next waypoint, at the vessel's speed. A waypoint counts as
/// reached once the vessel passes the line through it perpendicular to the
/// leg; the vessel leaves the scenario at its last waypoint or at the end of
/// the scenario.
pub fn generate_truth(cfg: &ScenarioConfig) -> Result<GroundTruth> {
    cfg.validate()?;
    let layout = cfg.layout()?;
    let mut vessels = Vec::with_capacity(cfg.vessels.len());
    for (vi, spec) in cfg.vessels.iter().enumerate() {
        let mut rng = stream(cfg.seed, 1, vi as u64);
        let route = &layout.routes[vi];
        let ou = cfg.dynamics.for_class(spec.class);
        let anomalies: Vec<AnomalySpec> = cfg.anomalies.iter().filter(|a| a.vessel == vi).copied().collect();
        let extent = sample_extent(spec.class, &mut rng);
        let mut schedule = vec![ScheduledWaypoint {
            t: spec.start_s,
            name: layout.names[route[0]].clone(),
            pos: layout.frame.from_local(&layout.xy[route[0]])?,
        }];
        let mut states = Vec::new();
        let mut leg = 0;
        let mut pos = layout.xy[route[0]];
        let aim = |from: Vector2<f64>, to: Vector2<f64>| -> Vector2<f64> {
            let d = to - from;
            let n = d.norm();
            if n > 0.0 { d / n } else { Vector2::zeros() }
        };
        let mut dir = aim(pos, layout.xy[route[1]]);
        let stationary = (ou.sigma * ou.sigma / (2.0 * ou.theta)).sqrt();
        let jitter = Vector2::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal));
        let mut x = Vector4::new(pos.x, pos.y, 0.0, 0.0);
        let v0 = dir * spec.speed_mps + jitter * stationary;
        x[2] = v0.x;
        x[3] = v0.y;
        let mut cached: Option<(Vector2<f64>, LinearTransition)> = None;
        let mut k = 0usize;
        loop {
            let t = spec.start_s + k as f64;
            states.push(x);
            if t + 1.0 > cfg.duration_s {
                break;
            }
            let mut mean = dir * spec.speed_mps;
            for a in &anomalies {
                if t >= a.t_s && t < a.t_s + a.duration_s {
                    mean += Vector2::new(a.delta_mps[0], a.delta_mps[1]);
                }
            }
            if cached.as_ref().is_none_or(|(m, _)| *m != mean) {
                let p = OuParams::isotropic(mean, ou.theta, ou.sigma)?;
                cached = Some((mean, DynamicModel::Ou(p).transition(1.0)?));
            }
            x = cached.as_ref().unwrap().1.sample(&x, &mut rng);
            pos = Vector2::new(x[0], x[1]);
            k += 1;
            let target = layout.xy[route[leg + 1]];
            if (pos - target).dot(&dir) >= 0.0 {
                leg += 1;
                schedule.push(ScheduledWaypoint {
                    t: t + 1.0,
                    name: layout.names[route[leg]].clone(),
                    pos: layout.frame.from_local(&target)?,
                });
                if leg + 1 == route.len() {
                    states.push(x);
                    break;
                }
                dir = aim(pos, layout.xy[route[leg + 1]]);
            }
        }
        vessels.push(VesselTruth {
            mmsi: vessel_mmsi(spec, vi)?,
            class: spec.class,
            extent,
            ship_type: spec.ship_type,
            t0: spec.start_s,
            states,
            schedule,
            anomalies,
        });
    }
    Ok(GroundTruth {
        frame: layout.frame,
        vessels,
    })
}

fn gaussian2<R: Rng + ?Sized>(rng: &mut R) -> Vector2<f64> {
    Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

fn wrong_mmsi<R: Rng + ?Sized>(truth: Mmsi, rng: &mut R) -> Mmsi {
    loop {
        let m = Mmsi::new(rng.random_range(100_000_000..=999_999_999)).expect("nine digits");
        if m != truth {
            return m;
        }
    }
}

/// AIS reports for every vessel, ordered by time then MMSI.
pub fn emit_ais(truth: &GroundTruth, cfg: &ScenarioConfig) -> Result<Vec<AisRecord>> {
    let Some(ais) = &cfg.ais else {
        return Ok(Vec::new());
    };
    let excess = Exp::new(1.0 / (ais.mean_interval_s - ais.min_interval_s))
        .map_err(|e| Error::validation(e.to_string()))?;
    let mut out = Vec::new();
    for (vi, v) in truth.vessels.iter().enumerate() {
        let mut rng = stream(cfg.seed, 2, vi as u64);
        // the first report falls uniformly in one mean interval after start
        let mut t = v.t0 + rng.random::<f64>() * ais.mean_interval_s;
        while let Some(x) = v.state_at(t) {
            if !ais.dark_periods.iter().any(|p| p.covers(vi, t)) {
                let p = Vector2::new(x[0], x[1]) + gaussian2(&mut rng) * ais.position_noise_m;
                let vel = Vector2::new(x[2], x[3]);
                let u: f64 = rng.random();
                let mmsi = if u < ais.mmsi_dropout {
                    None
                } else if u < ais.mmsi_dropout + (1.0 - ais.mmsi_dropout) * ais.mislabel {
                    Some(wrong_mmsi(v.mmsi, &mut rng))
                } else {
                    Some(v.mmsi)
                };
                out.push(AisRecord {
                    t,
                    mmsi,
                    pos: truth.frame.from_local(&p)?,
                    sog: Some(vel.norm()),
                    cog: Some(course_of(&vel)),
                    ship_type: v.ship_type,
                    length: ais.report_dimensions.then_some(v.extent.length),
                    width: ais.report_dimensions.then_some(v.extent.width),
                });
            }
            t += ais.min_interval_s + excess.sample(&mut rng);
        }
    }
    out.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.mmsi.cmp(&b.mmsi)));
    Ok(out)
}

fn one_hot_sample<R: Rng + ?Sized>(row: &[f64; NUM_CATEGORIES], rng: &mut R) -> ClassDistribution {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut pick = NUM_CATEGORIES - 1;
    for (i, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            pick = i;
            break;
        }
    }
    ClassDistribution::one_hot(VesselCategory::ALL[pick])
}

/// Detections of one sensor, scan by scan.
pub fn emit_sensor_detections(truth: &GroundTruth, cfg: &ScenarioConfig, sensor_index: usize) -> Result<Vec<Detection>> {
    let s = cfg
        .sensors
        .get(sensor_index)
        .ok_or_else(|| Error::validation("unknown sensor index"))?;
    let model = SensorModel::from_spec(&s.sensor_id, &s.model, &truth.frame)?;
    let sensor_geo = s.position.map(|[lat, lon]| GeoPosition::new(lat, lon)).transpose()?;
    let sensor_xy = sensor_geo.map(|g| truth.frame.to_local(&g));
    let mut rng = stream(cfg.seed, 3, sensor_index as u64);
    let uniform_row = [1.0 / NUM_CATEGORIES as f64; NUM_CATEGORIES];
    let body_of = |p: Vector2<f64>, noisy: bool, rng: &mut ChaCha8Rng| -> Result<DetectionBody> {
        let n = gaussian2(rng);
        Ok(match &model.noise {
            MeasurementNoise::Position { chol, .. } => {
                let z = if noisy { p + chol * n } else { p };
                DetectionBody::GeoFix(truth.frame.from_local(&z)?)
            }
            MeasurementNoise::RangeBearing { sigma_range, sigma_bearing } => {
                let origin = sensor_xy.expect("validated");
                let d = p - origin;
                let (er, eb) = if noisy { (sigma_range * n.x, sigma_bearing * n.y) } else { (0.0, 0.0) };
                DetectionBody::RangeBearing {
                    rho: (d.norm() + er).max(0.0),
                    bearing: (course_of(&d) + eb).rem_euclid(std::f64::consts::TAU),
                    sensor: sensor_geo.expect("validated"),
                }
            }
        })
    };
    let noisy_extent = |e: &Extent, rng: &mut ChaCha8Rng| -> Extent {
        let g = gaussian2(rng) * s.extent_noise;
        Extent {
            length: e.length * g.x.exp(),
            width: e.width * g.y.exp(),
        }
    };
    let clutter = (model.clutter_rate > 0.0)
        .then(|| Poisson::new(model.clutter_rate))
        .transpose()
        .map_err(|e| Error::validation(e.to_string()))?;
    let mut out = Vec::new();
    for t in s.epochs(cfg.duration_s) {
        let mut scan = Vec::new();
        for v in &truth.vessels {
            let Some(x) = v.state_at(t) else { continue };
            let p = Vector2::new(x[0], x[1]);
            if rng.random::<f64>() >= model.pd_at(&p) {
                continue;
            }
            scan.push(Detection {
                t,
                sensor_id: s.sensor_id.clone(),
                body: body_of(p, true, &mut rng)?,
                extent: Some(noisy_extent(&v.extent, &mut rng)),
                class_scores: model.confusion.as_ref().map(|c| one_hot_sample(c.row(v.class.index()), &mut rng)),
            });
        }
        if let (Some(poisson), Some(fov)) = (&clutter, &model.fov) {
            let n = poisson.sample(&mut rng) as usize;
            let (lo, hi) = fov.bounds();
            for _ in 0..n {
                let p = loop {
                    let p = Vector2::new(rng.random_range(lo.x..=hi.x), rng.random_range(lo.y..=hi.y));
                    if fov.contains(&p) {
                        break p;
                    }
                };
                let fake = VesselCategory::ALL[rng.random_range(0..NUM_CATEGORIES)];
                scan.push(Detection {
                    t,
                    sensor_id: s.sensor_id.clone(),
                    body: body_of(p, false, &mut rng)?,
                    extent: Some(sample_extent(fake, &mut rng)),
                    class_scores: model.confusion.as_ref().map(|_| one_hot_sample(&uniform_row, &mut rng)),
                });
            }
        }
        scan.shuffle(&mut rng);
        out.extend(scan);
    }
    Ok(out)
}

/// Detections of every configured sensor, ordered by time then sensor.
pub fn emit_detections(truth: &GroundTruth, cfg: &ScenarioConfig) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for i in 0..cfg.sensors.len() {
        out.extend(emit_sensor_detections(truth, cfg, i)?);
    }
    out.sort_by(|a, b| a.t.total_cmp(&b.t).then_with(|| a.sensor_id.cmp(&b.sensor_id)));
    Ok(out)
}
