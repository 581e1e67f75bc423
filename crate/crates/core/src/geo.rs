//! Geographic positions, the local tangent-plane frame and planar polygons.
//!
//! Local coordinates are east/north meters from an origin using an
//! equirectangular projection. This is accurate to well below typical sensor
//! noise for regions of a few hundred kilometers.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Wraps a longitude in degrees into `[-180, 180)`.
pub fn normalize_lon(lon: f64) -> f64 {
    if (-180.0..180.0).contains(&lon) {
        return lon;
    }
    let wrapped = (lon + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if wrapped >= 180.0 {
        wrapped - 360.0
    } else {
        wrapped
    }
}

/// A latitude/longitude pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPosition {
    lat: f64,
    lon: f64,
}

impl GeoPosition {
    /// Validates latitude and normalizes longitude into `[-180, 180)`.
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(Error::validation("non-finite coordinate"));
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::validation(format!("latitude out of range: {lat}")));
        }
        Ok(Self {
            lat,
            lon: normalize_lon(lon),
        })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// Equirectangular east/north frame anchored at an origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    origin: GeoPosition,
    m_per_deg_lat: f64,
    m_per_deg_lon: f64,
}

impl LocalFrame {
    pub fn new(origin: GeoPosition) -> Self {
        let m_per_deg_lat = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        let m_per_deg_lon = m_per_deg_lat * origin.lat().to_radians().cos();
        Self {
            origin,
            m_per_deg_lat,
            m_per_deg_lon,
        }
    }

    /// Frame centered on the mean latitude/longitude of `points`.
    ///
    /// Longitudes are averaged relative to the first point so that sets
    /// straddling the antimeridian do not collapse to the wrong hemisphere.
    pub fn centered_on(points: impl IntoIterator<Item = GeoPosition>) -> Option<Self> {
        let mut iter = points.into_iter();
        let first = iter.next()?;
        let (mut sum_lat, mut sum_dlon, mut n) = (first.lat(), 0.0, 1.0);
        for p in iter {
            sum_lat += p.lat();
            sum_dlon += normalize_lon(p.lon() - first.lon());
            n += 1.0;
        }
        let origin = GeoPosition::new(sum_lat / n, first.lon() + sum_dlon / n).ok()?;
        Some(Self::new(origin))
    }

    pub fn origin(&self) -> GeoPosition {
        self.origin
    }

    /// Projects a position to east/north meters.
    pub fn to_local(&self, p: &GeoPosition) -> Vector2<f64> {
        let dlat = p.lat() - self.origin.lat();
        let dlon = normalize_lon(p.lon() - self.origin.lon());
        Vector2::new(dlon * self.m_per_deg_lon, dlat * self.m_per_deg_lat)
    }

    /// Inverse of [`LocalFrame::to_local`].
    pub fn from_local(&self, xy: &Vector2<f64>) -> Result<GeoPosition> {
        let lat = self.origin.lat() + xy.y / self.m_per_deg_lat;
        if self.m_per_deg_lon == 0.0 {
            return Err(Error::validation("frame origin at a pole has no east axis"));
        }
        let lon = self.origin.lon() + xy.x / self.m_per_deg_lon;
        GeoPosition::new(lat, lon)
    }
}

/// A simple planar polygon in local coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<Vector2<f64>>,
}

impl Polygon {
    pub fn new(vertices: Vec<Vector2<f64>>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::validation("polygon needs at least 3 vertices"));
        }
        Ok(Self { vertices })
    }

    /// Projects a geographic polygon into `frame`.
    pub fn from_geo(frame: &LocalFrame, vertices: &[GeoPosition]) -> Result<Self> {
        Self::new(vertices.iter().map(|v| frame.to_local(v)).collect())
    }

    pub fn vertices(&self) -> &[Vector2<f64>] {
        &self.vertices
    }

    fn edges(&self) -> impl Iterator<Item = (Vector2<f64>, Vector2<f64>)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Unsigned area (shoelace formula).
    pub fn area(&self) -> f64 {
        self.edges()
            .map(|(a, b)| a.x * b.y - b.x * a.y)
            .sum::<f64>()
            .abs()
            / 2.0
    }

    /// Even-odd point-in-polygon test.
    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a.y > p.y) != (b.y > p.y) {
                let x_cross = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if p.x < x_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Euclidean distance from `p` to the polygon boundary.
    pub fn distance_to_boundary(&self, p: &Vector2<f64>) -> f64 {
        self.edges()
            .map(|(a, b)| point_segment_distance(p, &a, &b))
            .fold(f64::INFINITY, f64::min)
    }

    /// Axis-aligned bounding box as (min, max).
    pub fn bounds(&self) -> (Vector2<f64>, Vector2<f64>) {
        let mut lo = Vector2::repeat(f64::INFINITY);
        let mut hi = Vector2::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }
}

/// Distance from `p` to the segment `a`-`b`.
pub fn point_segment_distance(p: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let s = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * s)).norm()
}

/// Compass course (radians clockwise from north, in `[0, 2π)`) of an
/// east/north vector.
pub fn course_of(v: &Vector2<f64>) -> f64 {
    v.x.atan2(v.y).rem_euclid(std::f64::consts::TAU)
}

/// East/north velocity for a speed along a compass course.
pub fn velocity_from_course(speed: f64, course: f64) -> Vector2<f64> {
    Vector2::new(speed * course.sin(), speed * course.cos())
}

/// Smallest absolute difference between two angles in radians.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::TAU);
    d.min(std::f64::consts::TAU - d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame() -> LocalFrame {
        LocalFrame::new(GeoPosition::new(36.0, 14.5).unwrap())
    }

    #[test]
    fn origin_maps_to_zero() {
        let f = frame();
        let xy = f.to_local(&f.origin());
        assert_eq!(xy, Vector2::zeros());
    }

    #[test]
    fn latitude_step_in_meters() {
        let f = frame();
        let p = GeoPosition::new(36.01, 14.5).unwrap();
        let xy = f.to_local(&p);
        let expected = 0.01 * std::f64::consts::PI / 180.0 * 6_371_000.0;
        assert!((xy.y - expected).abs() < 1e-6);
        assert!((xy.y - 1111.95).abs() < 0.01);
        assert_eq!(xy.x, 0.0);
    }

    #[test]
    fn round_trip_within_100km() {
        let f = frame();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let xy = Vector2::new(rng.random_range(-70e3..70e3), rng.random_range(-70e3..70e3));
            let p = f.from_local(&xy).unwrap();
            let back = f.from_local(&f.to_local(&p)).unwrap();
            worst = worst
                .max((p.lat() - back.lat()).abs())
                .max((p.lon() - back.lon()).abs());
        }
        assert!(worst < 1e-9, "worst {worst}");
    }

    #[test]
    fn rejects_bad_latitude() {
        assert!(GeoPosition::new(95.0, 0.0).is_err());
        assert!(GeoPosition::new(f64::NAN, 0.0).is_err());
        assert!(frame().from_local(&Vector2::new(0.0, 1e8)).is_err());
    }

    #[test]
    fn longitude_normalization() {
        assert_eq!(GeoPosition::new(0.0, 180.0).unwrap().lon(), -180.0);
        assert_eq!(GeoPosition::new(0.0, 190.0).unwrap().lon(), -170.0);
        assert_eq!(GeoPosition::new(0.0, -180.0).unwrap().lon(), -180.0);
        let f = LocalFrame::new(GeoPosition::new(0.0, 179.9).unwrap());
        let xy = f.to_local(&GeoPosition::new(0.0, -179.9).unwrap());
        assert!(xy.x > 0.0 && xy.x < 30_000.0);
    }

    #[test]
    fn polygon_geometry() {
        let sq = Polygon::new(vec![
            Vector2::new(0.0, 0.0),
            Vector2::new(10.0, 0.0),
            Vector2::new(10.0, 10.0),
            Vector2::new(0.0, 10.0),
        ])
        .unwrap();
        assert_eq!(sq.area(), 100.0);
        assert!(sq.contains(&Vector2::new(5.0, 5.0)));
        assert!(!sq.contains(&Vector2::new(15.0, 5.0)));
        assert_eq!(sq.distance_to_boundary(&Vector2::new(5.0, 2.0)), 2.0);
        assert_eq!(sq.distance_to_boundary(&Vector2::new(13.0, 14.0)), 5.0);
    }

    #[test]
    fn course_conventions() {
        assert!((course_of(&Vector2::new(0.0, 5.0))).abs() < 1e-12);
        assert!((course_of(&Vector2::new(5.0, 0.0)) - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        let v = velocity_from_course(5.0, std::f64::consts::FRAC_PI_2);
        assert!((v - Vector2::new(5.0, 0.0)).norm() < 1e-12);
        assert!((angle_diff(0.1, std::f64::consts::TAU - 0.1) - 0.2).abs() < 1e-12);
    }
}
