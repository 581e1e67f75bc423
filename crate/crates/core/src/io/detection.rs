use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{parse_lines, Parsed};
use crate::category::ClassDistribution;
use crate::error::{Error, Result};
use crate::geo::GeoPosition;

/// Where a sensor contact is, in the sensor's native measurement space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetectionBody {
    GeoFix(GeoPosition),
    /// Range (m) and compass bearing (radians clockwise from north) from the
    /// sensor position.
    RangeBearing {
        rho: f64,
        bearing: f64,
        sensor: GeoPosition,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extent {
    pub length: f64,
    pub width: f64,
}

/// A time-stamped sensor contact. Sensor noise parameters are looked up by
/// `sensor_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub t: f64,
    pub sensor_id: String,
    pub body: DetectionBody,
    pub extent: Option<Extent>,
    pub class_scores: Option<ClassDistribution>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DetectionLine {
    t: f64,
    sensor_id: String,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    theta_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sensor_lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sensor_lon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_scores: Option<Vec<f64>>,
}

fn required(name: &str, v: Option<f64>) -> Result<f64> {
    v.ok_or_else(|| Error::validation(format!("missing field {name}")))
}

fn geo(lat: f64, lon: f64) -> Result<GeoPosition> {
    if !(-90.0..=90.0).contains(&lat) {
        return Err(Error::validation("latitude out of range"));
    }
    if !(-180.0..=180.0).contains(&lon) {
        return Err(Error::validation("longitude out of range"));
    }
    GeoPosition::new(lat, lon)
}

impl TryFrom<DetectionLine> for Detection {
    type Error = Error;

    fn try_from(l: DetectionLine) -> Result<Self> {
        if !l.t.is_finite() {
            return Err(Error::validation("timestamp is not finite"));
        }
        let body = match l.kind.as_str() {
            "geofix" => DetectionBody::GeoFix(geo(required("lat", l.lat)?, required("lon", l.lon)?)?),
            "rangebearing" => {
                let rho = required("rho", l.rho)?;
                if !(rho >= 0.0 && rho.is_finite()) {
                    return Err(Error::validation(format!("range must be >= 0, got {rho}")));
                }
                let theta = required("theta_deg", l.theta_deg)?;
                if !theta.is_finite() {
                    return Err(Error::validation("bearing is not finite"));
                }
                DetectionBody::RangeBearing {
                    rho,
                    bearing: theta.to_radians().rem_euclid(std::f64::consts::TAU),
                    sensor: geo(required("sensor_lat", l.sensor_lat)?, required("sensor_lon", l.sensor_lon)?)?,
                }
            }
            other => return Err(Error::validation(format!("unknown detection kind {other:?}"))),
        };
        let extent = match (l.length, l.width) {
            (None, None) => None,
            (Some(length), Some(width)) => {
                if !(length > 0.0 && width > 0.0 && length.is_finite() && width.is_finite()) {
                    return Err(Error::validation("extent must be positive"));
                }
                Some(Extent { length, width })
            }
            _ => return Err(Error::validation("length and width must be given together")),
        };
        let class_scores = l
            .class_scores
            .as_deref()
            .map(ClassDistribution::from_slice)
            .transpose()?;
        Ok(Detection {
            t: l.t,
            sensor_id: l.sensor_id,
            body,
            extent,
            class_scores,
        })
    }
}

impl From<&Detection> for DetectionLine {
    fn from(d: &Detection) -> Self {
        let mut line = DetectionLine {
            t: d.t,
            sensor_id: d.sensor_id.clone(),
            kind: String::new(),
            lat: None,
            lon: None,
            rho: None,
            theta_deg: None,
            sensor_lat: None,
            sensor_lon: None,
            length: d.extent.map(|e| e.length),
            width: d.extent.map(|e| e.width),
            class_scores: d.class_scores.map(|c| c.probs().to_vec()),
        };
        match d.body {
            DetectionBody::GeoFix(p) => {
                line.kind = "geofix".into();
                line.lat = Some(p.lat());
                line.lon = Some(p.lon());
            }
            DetectionBody::RangeBearing { rho, bearing, sensor } => {
                line.kind = "rangebearing".into();
                line.rho = Some(rho);
                line.theta_deg = Some(bearing.to_degrees());
                line.sensor_lat = Some(sensor.lat());
                line.sensor_lon = Some(sensor.lon());
            }
        }
        line
    }
}

pub fn parse_detections<R: BufRead>(reader: R) -> Result<Parsed<Detection>> {
    parse_lines(reader, |l: DetectionLine| Detection::try_from(l))
}

pub fn write_detections<'a, W: Write>(
    w: W,
    detections: impl IntoIterator<Item = &'a Detection>,
) -> Result<()> {
    super::write_jsonl(w, detections.into_iter().map(DetectionLine::from))
}
