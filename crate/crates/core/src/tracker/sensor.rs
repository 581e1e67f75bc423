use std::collections::BTreeMap;

use nalgebra::{Matrix2, Vector2, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::category::{ClassDistribution, ConfusionMatrix};
use crate::error::{Error, Result};
use crate::geo::{angle_diff, course_of, velocity_from_course, GeoPosition, LocalFrame, Polygon};
use crate::io::{AisRecord, Detection, DetectionBody, Extent, Mmsi};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Measurement noise as written in a sensor configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseSpec {
    /// Position fix; either an isotropic standard deviation or a full east/north
    /// covariance in m².
    Geofix {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma_m: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cov: Option<[[f64; 2]; 2]>,
    },
    Rangebearing {
        sigma_range_m: f64,
        sigma_bearing_deg: f64,
    },
}

/// One entry of the sensor configuration map (angles in degrees, positions
/// as `[lat, lon]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub pd: f64,
    #[serde(default)]
    pub clutter_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fov: Option<Vec<[f64; 2]>>,
    pub noise: NoiseSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_error: Option<f64>,
    /// Standard deviation of reported velocity components (AIS speed/course).
    /// When absent, reported velocities are ignored by the likelihood.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity_sigma_mps: Option<f64>,
    /// Expected number of new, not yet tracked targets per m² in a scan.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_target_density: Option<f64>,
    /// Existence probability given to targets born from this sensor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub birth_existence: Option<f64>,
}

pub const DEFAULT_NEW_TARGET_DENSITY: f64 = 1e-12;

/// Parses a sensor configuration document: a JSON object keyed by sensor id.
pub fn parse_sensor_config(json: &str) -> Result<BTreeMap<String, SensorSpec>> {
    Ok(serde_json::from_str(json)?)
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeasurementNoise {
    Position { cov: Matrix2<f64>, inv: Matrix2<f64>, log_norm: f64, chol: Matrix2<f64> },
    RangeBearing { sigma_range: f64, sigma_bearing: f64 },
}

impl MeasurementNoise {
    pub fn position(cov: Matrix2<f64>) -> Result<Self> {
        let chol = cov
            .cholesky()
            .ok_or_else(|| Error::config("position noise covariance must be positive definite"))?;
        let det = cov.determinant();
        Ok(MeasurementNoise::Position {
            cov,
            inv: cov.try_inverse().expect("positive definite"),
            log_norm: -LN_2PI - 0.5 * det.ln(),
            chol: chol.l(),
        })
    }
}

/// Sensor model projected into the tracker's local frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorModel {
    pub sensor_id: String,
    pub pd: f64,
    pub clutter_rate: f64,
    pub fov: Option<Polygon>,
    pub fov_area: Option<f64>,
    pub noise: MeasurementNoise,
    pub confusion: Option<ConfusionMatrix>,
    pub label_error: f64,
    pub velocity_sigma: Option<f64>,
    pub new_target_density: f64,
    pub birth_existence: Option<f64>,
}

impl SensorModel {
    pub fn from_spec(sensor_id: &str, spec: &SensorSpec, frame: &LocalFrame) -> Result<Self> {
        let bad = |m: &str| Error::config(format!("sensor {sensor_id}: {m}"));
        if !(spec.pd > 0.0 && spec.pd <= 1.0) {
            return Err(bad("pd must lie in (0, 1]"));
        }
        if !(spec.clutter_rate >= 0.0 && spec.clutter_rate.is_finite()) {
            return Err(bad("clutter_rate must be >= 0"));
        }
        let fov = spec
            .fov
            .as_ref()
            .map(|v| {
                let verts = v
                    .iter()
                    .map(|&[lat, lon]| GeoPosition::new(lat, lon))
                    .collect::<Result<Vec<_>>>()?;
                Polygon::from_geo(frame, &verts)
            })
            .transpose()?;
        let fov_area = fov.as_ref().map(Polygon::area);
        if spec.clutter_rate > 0.0 && !fov_area.is_some_and(|a| a > 0.0) {
            return Err(bad("clutter density is zero: clutter_rate > 0 needs a field of view with positive area"));
        }
        let noise = match &spec.noise {
            NoiseSpec::Geofix { sigma_m: Some(s), cov: None } if *s > 0.0 => {
                MeasurementNoise::position(Matrix2::identity() * (*s * *s))?
            }
            NoiseSpec::Geofix { sigma_m: None, cov: Some(c) } => {
                if c[0][1] != c[1][0] {
                    return Err(bad("noise covariance must be symmetric"));
                }
                MeasurementNoise::position(Matrix2::new(c[0][0], c[0][1], c[1][0], c[1][1]))
                    .map_err(|_| bad("noise covariance must be positive definite"))?
            }
            NoiseSpec::Geofix { .. } => return Err(bad("geofix noise needs exactly one of sigma_m > 0 or cov")),
            NoiseSpec::Rangebearing { sigma_range_m, sigma_bearing_deg } => {
                if !(*sigma_range_m > 0.0 && *sigma_bearing_deg > 0.0) {
                    return Err(bad("range/bearing noise must be positive"));
                }
                MeasurementNoise::RangeBearing {
                    sigma_range: *sigma_range_m,
                    sigma_bearing: sigma_bearing_deg.to_radians(),
                }
            }
        };
        let label_error = spec.label_error.unwrap_or(0.0);
        if !(0.0..1.0).contains(&label_error) {
            return Err(bad("label_error must lie in [0, 1)"));
        }
        if spec.velocity_sigma_mps.is_some_and(|s| !(s > 0.0)) {
            return Err(bad("velocity_sigma_mps must be positive"));
        }
        let new_target_density = spec.new_target_density.unwrap_or(DEFAULT_NEW_TARGET_DENSITY);
        if !(new_target_density >= 0.0) {
            return Err(bad("new_target_density must be >= 0"));
        }
        if let Some(r) = spec.birth_existence {
            if !(r > 0.0 && r < 1.0) {
                return Err(bad("birth_existence must lie in (0, 1)"));
            }
        }
        let model = Self {
            sensor_id: sensor_id.to_string(),
            pd: spec.pd,
            clutter_rate: spec.clutter_rate,
            fov,
            fov_area,
            noise,
            confusion: spec.confusion.clone(),
            label_error,
            velocity_sigma: spec.velocity_sigma_mps,
            new_target_density,
            birth_existence: spec.birth_existence,
        };
        if !(model.reference_density() > 0.0) {
            return Err(bad("clutter and new-target densities are both zero"));
        }
        Ok(model)
    }

    /// Clutter density μ_c (per m²); zero for clutter-free sensors.
    pub fn clutter_density(&self) -> f64 {
        match self.fov_area {
            Some(a) if self.clutter_rate > 0.0 => self.clutter_rate / a,
            _ => 0.0,
        }
    }

    /// Density of measurements not produced by a tracked target:
    /// clutter plus newly appearing targets.
    pub fn reference_density(&self) -> f64 {
        self.clutter_density() + self.new_target_density
    }

    /// Detection probability at a local position (zero outside the FOV).
    pub fn pd_at(&self, pos: &Vector2<f64>) -> f64 {
        match &self.fov {
            Some(poly) if !poly.contains(pos) => 0.0,
            _ => self.pd,
        }
    }

    /// Log-likelihood `ln f(z | x)` of a measurement given a state.
    pub fn log_likelihood(&self, z: &Measurement, x: &Vector4<f64>) -> f64 {
        let mut ll = match (&self.noise, &z.body) {
            (MeasurementNoise::Position { inv, log_norm, .. }, MeasurementBody::Position(p)) => {
                let d = Vector2::new(p.x - x[0], p.y - x[1]);
                log_norm - 0.5 * (d.transpose() * inv * d)[0]
            }
            (MeasurementNoise::RangeBearing { sigma_range, sigma_bearing }, MeasurementBody::RangeBearing { rho, bearing, sensor }) => {
                let d = Vector2::new(x[0] - sensor.x, x[1] - sensor.y);
                let er = (rho - d.norm()) / sigma_range;
                let eb = angle_diff(*bearing, course_of(&d)) / sigma_bearing;
                -LN_2PI - sigma_range.ln() - sigma_bearing.ln() - 0.5 * (er * er + eb * eb)
            }
            (MeasurementNoise::Position { inv, log_norm, .. }, MeasurementBody::RangeBearing { .. }) => {
                // A position-noise sensor fed range/bearing data: use the
                // converted position.
                let p = z.body.position();
                let d = Vector2::new(p.x - x[0], p.y - x[1]);
                log_norm - 0.5 * (d.transpose() * inv * d)[0]
            }
            (MeasurementNoise::RangeBearing { .. }, MeasurementBody::Position(_)) => f64::NEG_INFINITY,
        };
        if let (Some(s), Some(v)) = (self.velocity_sigma, z.velocity) {
            let dv = Vector2::new(v.x - x[2], v.y - x[3]);
            ll += -LN_2PI - 2.0 * s.ln() - 0.5 * dv.norm_squared() / (s * s);
        }
        ll
    }

    /// Draws a position consistent with the measurement (used for births).
    pub fn sample_position<R: Rng + ?Sized>(&self, z: &Measurement, rng: &mut R) -> Vector2<f64> {
        let n: Vector2<f64> = Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
        match (&self.noise, &z.body) {
            (MeasurementNoise::RangeBearing { sigma_range, sigma_bearing }, MeasurementBody::RangeBearing { rho, bearing, sensor }) => {
                let r = (rho + sigma_range * n.x).max(0.0);
                let b = bearing + sigma_bearing * n.y;
                sensor + velocity_from_course(r, b)
            }
            (MeasurementNoise::Position { chol, .. }, _) => z.body.position() + chol * n,
            (MeasurementNoise::RangeBearing { sigma_range, .. }, MeasurementBody::Position(p)) => p + n * *sigma_range,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeasurementBody {
    Position(Vector2<f64>),
    RangeBearing { rho: f64, bearing: f64, sensor: Vector2<f64> },
}

impl MeasurementBody {
    /// Nominal position implied by the measurement.
    pub fn position(&self) -> Vector2<f64> {
        match self {
            MeasurementBody::Position(p) => *p,
            MeasurementBody::RangeBearing { rho, bearing, sensor } => sensor + velocity_from_course(*rho, *bearing),
        }
    }
}

/// A measurement in the tracker's local frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub t: f64,
    pub body: MeasurementBody,
    pub velocity: Option<Vector2<f64>>,
    pub mmsi: Option<Mmsi>,
    pub class_scores: Option<ClassDistribution>,
    pub extent: Option<Extent>,
}

impl Measurement {
    pub fn position(t: f64, p: Vector2<f64>) -> Self {
        Self {
            t,
            body: MeasurementBody::Position(p),
            velocity: None,
            mmsi: None,
            class_scores: None,
            extent: None,
        }
    }

    pub fn from_detection(d: &Detection, frame: &LocalFrame) -> Self {
        let body = match d.body {
            DetectionBody::GeoFix(p) => MeasurementBody::Position(frame.to_local(&p)),
            DetectionBody::RangeBearing { rho, bearing, sensor } => MeasurementBody::RangeBearing {
                rho,
                bearing,
                sensor: frame.to_local(&sensor),
            },
        };
        Self {
            t: d.t,
            body,
            velocity: None,
            mmsi: None,
            class_scores: d.class_scores,
            extent: d.extent,
        }
    }

    pub fn from_ais(r: &AisRecord, frame: &LocalFrame) -> Self {
        Self {
            t: r.t,
            body: MeasurementBody::Position(frame.to_local(&r.pos)),
            velocity: match (r.sog, r.cog) {
                (Some(s), Some(c)) => Some(velocity_from_course(s, c)),
                _ => None,
            },
            mmsi: r.mmsi,
            class_scores: None,
            extent: match (r.length, r.width) {
                (Some(length), Some(width)) => Some(Extent { length, width }),
                _ => None,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame() -> LocalFrame {
        LocalFrame::new(GeoPosition::new(36.0, 14.0).unwrap())
    }

    fn geofix(sigma: f64) -> SensorSpec {
        SensorSpec {
            pd: 0.9,
            clutter_rate: 0.0,
            fov: None,
            noise: NoiseSpec::Geofix { sigma_m: Some(sigma), cov: None },
            confusion: None,
            label_error: None,
            velocity_sigma_mps: None,
            new_target_density: None,
            birth_existence: None,
        }
    }

    #[test]
    fn gaussian_position_likelihood() {
        let s = SensorModel::from_spec("s", &geofix(10.0), &frame()).unwrap();
        let z = Measurement::position(0.0, Vector2::new(3.0, 4.0));
        let ll = s.log_likelihood(&z, &Vector4::zeros());
        let expected = (1.0 / (2.0 * std::f64::consts::PI * 100.0) * (-25.0f64 / 200.0).exp()).ln();
        assert!((ll - expected).abs() < 1e-12);
    }

    #[test]
    fn clutter_without_fov_is_a_config_error() {
        let mut spec = geofix(10.0);
        spec.clutter_rate = 2.0;
        assert!(matches!(SensorModel::from_spec("s", &spec, &frame()), Err(Error::Config(_))));
        spec.clutter_rate = 0.0;
        spec.new_target_density = Some(0.0);
        assert!(SensorModel::from_spec("s", &spec, &frame()).is_err());
    }

    #[test]
    fn fov_gates_detection_probability() {
        let f = frame();
        let mut spec = geofix(10.0);
        let corner = |x: f64, y: f64| {
            let g = f.from_local(&Vector2::new(x, y)).unwrap();
            [g.lat(), g.lon()]
        };
        spec.fov = Some(vec![corner(-1000.0, -1000.0), corner(1000.0, -1000.0), corner(1000.0, 1000.0), corner(-1000.0, 1000.0)]);
        spec.clutter_rate = 4.0;
        let s = SensorModel::from_spec("s", &spec, &f).unwrap();
        assert!((s.clutter_density() - 4.0 / 4e6).abs() < 1e-12);
        assert_eq!(s.pd_at(&Vector2::zeros()), 0.9);
        assert_eq!(s.pd_at(&Vector2::new(5000.0, 0.0)), 0.0);
    }

    #[test]
    fn range_bearing_likelihood_peaks_at_truth() {
        let spec = SensorSpec {
            noise: NoiseSpec::Rangebearing { sigma_range_m: 20.0, sigma_bearing_deg: 0.5 },
            ..geofix(1.0)
        };
        let s = SensorModel::from_spec("r", &spec, &frame()).unwrap();
        let z = Measurement {
            body: MeasurementBody::RangeBearing { rho: 1000.0, bearing: std::f64::consts::FRAC_PI_2, sensor: Vector2::zeros() },
            ..Measurement::position(0.0, Vector2::zeros())
        };
        let at = |x: f64, y: f64| s.log_likelihood(&z, &Vector4::new(x, y, 0.0, 0.0));
        assert!(at(1000.0, 0.0) > at(1010.0, 0.0));
        assert!(at(1000.0, 0.0) > at(1000.0, 10.0));
        assert!((z.body.position() - Vector2::new(1000.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn config_document_parses() {
        let doc = r#"{
            "ais": {"pd": 0.05, "noise": {"kind": "geofix", "sigma_m": 20}, "label_error": 0.01, "velocity_sigma_mps": 0.5},
            "radar": {"pd": 0.8, "noise": {"kind": "rangebearing", "sigma_range_m": 30, "sigma_bearing_deg": 1}}
        }"#;
        let m = parse_sensor_config(doc).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m["ais"].label_error, Some(0.01));
        assert!(parse_sensor_config(r#"{"x": {"pd": 1, "noise": {"kind": "geofix", "sigma_m": 1}, "bogus": 3}}"#).is_err());
    }
}
