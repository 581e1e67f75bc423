use std::io::{BufRead, Write};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::{parse_lines, Mmsi, Parsed};
use crate::category::VesselCategory;
use crate::error::{Error, Result};
use crate::geo::{course_of, velocity_from_course, GeoPosition};

/// One ground-truth sample of one vessel.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthPoint {
    pub t: f64,
    pub mmsi: Mmsi,
    pub class: VesselCategory,
    pub pos: GeoPosition,
    /// East/north velocity, m/s.
    pub vel: Vector2<f64>,
}

/// One emitted tracker estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackPoint {
    pub t: f64,
    pub track_id: u64,
    pub mmsi: Option<Mmsi>,
    pub pos: GeoPosition,
    pub vel: Vector2<f64>,
    pub class: Option<VesselCategory>,
    pub existence: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthLine {
    t: f64,
    mmsi: Mmsi,
    class: VesselCategory,
    lat: f64,
    lon: f64,
    speed_mps: f64,
    course_deg: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrackLine {
    t: f64,
    track_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mmsi: Option<Mmsi>,
    lat: f64,
    lon: f64,
    speed_mps: f64,
    course_deg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class: Option<VesselCategory>,
    existence: f64,
}

fn kinematics(t: f64, lat: f64, lon: f64, speed: f64, course_deg: f64) -> Result<(GeoPosition, Vector2<f64>)> {
    if !t.is_finite() {
        return Err(Error::validation("timestamp is not finite"));
    }
    if !(speed >= 0.0 && speed.is_finite()) || !course_deg.is_finite() {
        return Err(Error::validation("speed must be >= 0 and course finite"));
    }
    let pos = GeoPosition::new(lat, lon)?;
    Ok((pos, velocity_from_course(speed, course_deg.to_radians())))
}

impl TryFrom<TruthLine> for TruthPoint {
    type Error = Error;

    fn try_from(l: TruthLine) -> Result<Self> {
        let (pos, vel) = kinematics(l.t, l.lat, l.lon, l.speed_mps, l.course_deg)?;
        Ok(Self {
            t: l.t,
            mmsi: l.mmsi,
            class: l.class,
            pos,
            vel,
        })
    }
}

impl TryFrom<TrackLine> for TrackPoint {
    type Error = Error;

    fn try_from(l: TrackLine) -> Result<Self> {
        let (pos, vel) = kinematics(l.t, l.lat, l.lon, l.speed_mps, l.course_deg)?;
        if !(0.0..=1.0).contains(&l.existence) {
            return Err(Error::validation("existence must lie in [0, 1]"));
        }
        Ok(Self {
            t: l.t,
            track_id: l.track_id,
            mmsi: l.mmsi,
            pos,
            vel,
            class: l.class,
            existence: l.existence,
        })
    }
}

pub fn parse_truth<R: BufRead>(reader: R) -> Result<Parsed<TruthPoint>> {
    parse_lines(reader, |l: TruthLine| TruthPoint::try_from(l))
}

pub fn write_truth<'a, W: Write>(w: W, points: impl IntoIterator<Item = &'a TruthPoint>) -> Result<()> {
    super::write_jsonl(
        w,
        points.into_iter().map(|p| TruthLine {
            t: p.t,
            mmsi: p.mmsi,
            class: p.class,
            lat: p.pos.lat(),
            lon: p.pos.lon(),
            speed_mps: p.vel.norm(),
            course_deg: course_of(&p.vel).to_degrees(),
        }),
    )
}

pub fn parse_track_points<R: BufRead>(reader: R) -> Result<Parsed<TrackPoint>> {
    parse_lines(reader, |l: TrackLine| TrackPoint::try_from(l))
}

pub fn write_track_points<'a, W: Write>(w: W, points: impl IntoIterator<Item = &'a TrackPoint>) -> Result<()> {
    super::write_jsonl(
        w,
        points.into_iter().map(|p| TrackLine {
            t: p.t,
            track_id: p.track_id,
            mmsi: p.mmsi,
            lat: p.pos.lat(),
            lon: p.pos.lon(),
            speed_mps: p.vel.norm(),
            course_deg: course_of(&p.vel).to_degrees(),
            class: p.class,
            existence: p.existence,
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn track_point_round_trip() {
        let p = TrackPoint {
            t: 5.0,
            track_id: 3,
            mmsi: Some(Mmsi::new(247000001).unwrap()),
            pos: GeoPosition::new(36.0, 14.0).unwrap(),
            vel: Vector2::new(3.0, 4.0),
            class: Some(VesselCategory::Tanker),
            existence: 0.97,
        };
        let mut buf = Vec::new();
        write_track_points(&mut buf, [&p]).unwrap();
        let back = parse_track_points(buf.as_slice()).unwrap();
        assert!(back.diagnostics.is_empty());
        let q = &back.records[0];
        assert_eq!((q.t, q.track_id, q.mmsi, q.class, q.existence), (p.t, p.track_id, p.mmsi, p.class, p.existence));
        assert!((q.vel - p.vel).norm() < 1e-12);
    }

    #[test]
    fn truth_rejects_negative_speed() {
        let line = r#"{"t":0,"mmsi":247000001,"class":"cargo","lat":0,"lon":0,"speed_mps":-1,"course_deg":0}"#;
        let p = parse_truth(line.as_bytes()).unwrap();
        assert_eq!(p.diagnostics.len(), 1);
    }
}
