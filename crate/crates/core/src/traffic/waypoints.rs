use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::dbscan::dbscan;
use crate::error::{Error, Result};
use crate::geo::{course_of, GeoPosition, LocalFrame, Polygon};
use crate::io::Track;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaypointKind {
    Port,
    Navigational,
    Entry,
    Exit,
    EntryExit,
}

/// A location where a vessel's long-run velocity changes, or where it
/// crosses into or out of the area of interest.
#[derive(Debug, Clone, PartialEq)]
pub struct Waypoint {
    pub pos: GeoPosition,
    pub t: f64,
    pub kind: WaypointKind,
    pub v_before: Vector2<f64>,
    pub v_after: Vector2<f64>,
    /// Index of the source track in the caller's track list.
    pub track_ref: usize,
}

/// Area of interest; tracks starting or ending within `margin_m` of its
/// boundary produce entry/exit waypoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    /// Vertices as `[lat, lon]` pairs.
    pub polygon: Vec<[f64; 2]>,
    pub margin_m: f64,
}

impl Region {
    pub fn vertices(&self) -> Result<Vec<GeoPosition>> {
        self.polygon
            .iter()
            .map(|&[lat, lon]| GeoPosition::new(lat, lon))
            .collect()
    }

    fn project(&self) -> Result<(LocalFrame, Polygon)> {
        let verts = self.vertices()?;
        let frame = LocalFrame::centered_on(verts.iter().copied())
            .ok_or_else(|| Error::validation("region polygon is empty"))?;
        Ok((frame, Polygon::from_geo(&frame, &verts)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaypointConfig {
    /// Samples per side of the sliding two-window test.
    pub window: usize,
    /// Detection threshold on the log generalized likelihood ratio.
    pub threshold: f64,
    /// Minimum spacing, in samples, between accepted change points.
    pub min_segment: usize,
    /// Speeds below this (m/s) count as stopped.
    pub port_speed: f64,
    /// Course change (radians) needed for a navigational waypoint.
    pub turn_angle: f64,
    /// Lower bound on the pooled velocity standard deviation (m/s).
    pub sigma_floor: f64,
    pub boundary: Option<Region>,
}

impl Default for WaypointConfig {
    fn default() -> Self {
        Self {
            window: 10,
            threshold: 8.0,
            min_segment: 10,
            port_speed: 0.26,
            turn_angle: 15f64.to_radians(),
            sigma_floor: 0.1,
            boundary: None,
        }
    }
}

/// Per-point velocity in east/north m/s.
///
/// Reported speed and course are used when both are present; otherwise the
/// velocity is a finite difference of positions (central for interior
/// points, one-sided at the ends).
pub fn velocity_sequence(track: &Track) -> Result<Vec<(f64, Vector2<f64>)>> {
    let pts = &track.points;
    if pts.len() < 2 {
        return Err(Error::validation("velocity needs a track with at least 2 points"));
    }
    let frame = LocalFrame::new(pts[0].pos);
    let xy: Vec<Vector2<f64>> = pts.iter().map(|p| frame.to_local(&p.pos)).collect();
    let n = pts.len();
    Ok((0..n)
        .map(|i| {
            let p = &pts[i];
            let v = match (p.sog, p.cog) {
                (Some(sog), Some(cog)) => Vector2::new(sog * cog.sin(), sog * cog.cos()),
                _ => {
                    let (a, b) = match i {
                        0 => (0, 1),
                        i if i == n - 1 => (n - 2, n - 1),
                        i => (i - 1, i + 1),
                    };
                    (xy[b] - xy[a]) / (pts[b].t - pts[a].t)
                }
            };
            (p.t, v)
        })
        .collect())
}

fn window_stats(v: &[(f64, Vector2<f64>)]) -> (Vector2<f64>, f64) {
    let n = v.len() as f64;
    let mean = v.iter().map(|(_, x)| x).sum::<Vector2<f64>>() / n;
    let ss = v.iter().map(|(_, x)| (x - mean).norm_squared()).sum();
    (mean, ss)
}

/// Two-window mean-shift statistic at every admissible split index.
///
/// `out[i]` compares samples `[i−w, i)` with `[i, i+w)`; indices without two
/// full windows hold 0.
pub(crate) fn change_statistic(vel: &[(f64, Vector2<f64>)], w: usize, sigma_floor: f64) -> Vec<f64> {
    let n = vel.len();
    let mut out = vec![0.0; n];
    if w == 0 || n < 2 * w {
        return out;
    }
    let dof = (2 * (2 * w).saturating_sub(2)).max(1) as f64;
    for (i, o) in out.iter_mut().enumerate().take(n - w + 1).skip(w) {
        let (ml, ssl) = window_stats(&vel[i - w..i]);
        let (mr, ssr) = window_stats(&vel[i..i + w]);
        let shift2 = (ml - mr).norm_squared();
        if shift2 == 0.0 {
            continue;
        }
        let var = ((ssl + ssr) / dof).max(sigma_floor * sigma_floor);
        if var > 0.0 {
            *o = w as f64 / 4.0 * shift2 / var;
        } else {
            *o = f64::INFINITY;
        }
    }
    out
}

/// Indices of accepted change points: local maxima of `stat` over `±w`
/// exceeding `threshold`, greedily kept in decreasing order of the statistic
/// while at least `min_segment` apart.
pub(crate) fn pick_change_points(stat: &[f64], threshold: f64, w: usize, min_segment: usize) -> Vec<usize> {
    let n = stat.len();
    let mut cands: Vec<usize> = (0..n)
        .filter(|&i| stat[i] > threshold)
        .filter(|&i| {
            let lo = i.saturating_sub(w);
            let hi = (i + w).min(n - 1);
            (lo..=hi).all(|j| stat[j] < stat[i] || (stat[j] == stat[i] && j >= i))
        })
        .collect();
    cands.sort_by(|&a, &b| stat[b].total_cmp(&stat[a]).then(a.cmp(&b)));
    let mut accepted: Vec<usize> = Vec::new();
    for c in cands {
        if accepted.iter().all(|&a| a.abs_diff(c) >= min_segment) {
            accepted.push(c);
        }
    }
    accepted.sort_unstable();
    accepted
}

/// Detects and classifies waypoints along one track.
pub fn detect_waypoints(track: &Track, track_ref: usize, cfg: &WaypointConfig) -> Result<Vec<Waypoint>> {
    if cfg.window == 0 || cfg.min_segment == 0 {
        return Err(Error::validation("window and min_segment must be positive"));
    }
    let needed = (2 * cfg.min_segment).max(2);
    if track.len() < needed {
        return Err(Error::validation(format!(
            "track has {} points, waypoint detection needs {needed}",
            track.len()
        )));
    }
    let vel = velocity_sequence(track)?;
    let n = vel.len();
    let w = cfg.window;
    let boundary = cfg.boundary.as_ref().map(Region::project).transpose()?;
    let near_boundary = |p: &GeoPosition| {
        boundary.as_ref().is_some_and(|(frame, poly)| {
            poly.distance_to_boundary(&frame.to_local(p)) <= cfg.boundary.as_ref().unwrap().margin_m
        })
    };
    let mean_of = |range: std::ops::Range<usize>| window_stats(&vel[range]).0;

    let mut out = Vec::new();
    let pts = &track.points;
    let head = mean_of(0..w.min(n));
    if near_boundary(&pts[0].pos) {
        out.push(Waypoint {
            pos: pts[0].pos,
            t: pts[0].t,
            kind: WaypointKind::Entry,
            v_before: head,
            v_after: head,
            track_ref,
        });
    }

    // Velocities either side of a change are averaged over the whole segment
    // up to the neighboring change point, so a gradual stop still reads as
    // near-zero speed.
    let stat = change_statistic(&vel, w, cfg.sigma_floor);
    let changes = pick_change_points(&stat, cfg.threshold, w, cfg.min_segment);
    for (k, &i) in changes.iter().enumerate() {
        let prev = if k == 0 { 0 } else { changes[k - 1] };
        let next = changes.get(k + 1).copied().unwrap_or(n);
        let before = mean_of(prev..i);
        let after = mean_of(i..next);
        let kind = if before.norm() < cfg.port_speed || after.norm() < cfg.port_speed {
            WaypointKind::Port
        } else if near_boundary(&pts[i].pos) {
            WaypointKind::EntryExit
        } else if before.angle(&after) > cfg.turn_angle {
            WaypointKind::Navigational
        } else {
            // speed change along an unchanged course
            continue;
        };
        out.push(Waypoint {
            pos: pts[i].pos,
            t: pts[i].t,
            kind,
            v_before: before,
            v_after: after,
            track_ref,
        });
    }

    let last = n - 1;
    if near_boundary(&pts[last].pos) {
        let tail = mean_of(n.saturating_sub(w)..n);
        out.push(Waypoint {
            pos: pts[last].pos,
            t: pts[last].t,
            kind: WaypointKind::Exit,
            v_before: tail,
            v_after: tail,
            track_ref,
        });
    }
    Ok(out)
}

/// A group of nearby waypoints; becomes a traffic-graph node.
#[derive(Debug, Clone, PartialEq)]
pub struct WaypointCluster {
    pub id: usize,
    pub members: Vec<Waypoint>,
    pub centroid: GeoPosition,
    pub kind: WaypointKind,
    /// Largest member distance from the centroid, meters.
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterParams {
    pub eps: f64,
    pub min_pts: usize,
    /// When set, the outgoing course is added as a feature; the value is the
    /// number of meters one degree of course difference counts for.
    pub course_scale_m_per_deg: Option<f64>,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            eps: 2000.0,
            min_pts: 5,
            course_scale_m_per_deg: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub frame: LocalFrame,
    pub clusters: Vec<WaypointCluster>,
    pub noise: Vec<Waypoint>,
}

fn dominant_kind(members: &[Waypoint]) -> WaypointKind {
    let kinds = [
        WaypointKind::Port,
        WaypointKind::Navigational,
        WaypointKind::Entry,
        WaypointKind::Exit,
        WaypointKind::EntryExit,
    ];
    let count = |k: WaypointKind| members.iter().filter(|m| m.kind == k).count();
    let (entry, exit) = (count(WaypointKind::Entry), count(WaypointKind::Exit));
    let mut best = kinds
        .into_iter()
        .max_by(|&a, &b| count(a).cmp(&count(b)).then(b.cmp(&a)))
        .expect("non-empty kind list");
    // boundary clusters used in both directions
    if matches!(best, WaypointKind::Entry | WaypointKind::Exit) && entry > 0 && exit > 0 {
        best = WaypointKind::EntryExit;
    }
    best
}

/// Clusters waypoints with DBSCAN in a local frame centered on them.
pub fn cluster_waypoints(waypoints: &[Waypoint], params: &ClusterParams) -> Result<Clustering> {
    if !(params.eps > 0.0) || params.min_pts == 0 {
        return Err(Error::validation("eps must be > 0 and min_pts >= 1"));
    }
    let frame = LocalFrame::centered_on(waypoints.iter().map(|w| w.pos)).unwrap_or_else(|| {
        LocalFrame::new(GeoPosition::new(0.0, 0.0).expect("valid origin"))
    });
    let xy: Vec<Vector2<f64>> = waypoints.iter().map(|w| frame.to_local(&w.pos)).collect();
    let labels = match params.course_scale_m_per_deg {
        None => {
            let pts: Vec<[f64; 2]> = xy.iter().map(|p| [p.x, p.y]).collect();
            dbscan(&pts, params.eps, params.min_pts).labels
        }
        Some(scale) => {
            // chord on a circle of radius scale·180/π: ≈ scale meters per degree
            let r = scale.to_degrees();
            let pts: Vec<[f64; 4]> = waypoints
                .iter()
                .zip(&xy)
                .map(|(w, p)| {
                    let c = course_of(&w.v_after);
                    [p.x, p.y, r * c.sin(), r * c.cos()]
                })
                .collect();
            dbscan(&pts, params.eps, params.min_pts).labels
        }
    };
    let n_clusters = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    let mut noise = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        match l {
            Some(c) => groups[*c].push(i),
            None => noise.push(waypoints[i].clone()),
        }
    }
    let clusters = groups
        .into_iter()
        .enumerate()
        .map(|(id, idx)| {
            let centroid_xy = idx.iter().map(|&i| xy[i]).sum::<Vector2<f64>>() / idx.len() as f64;
            let radius = idx
                .iter()
                .map(|&i| (xy[i] - centroid_xy).norm())
                .fold(0.0, f64::max);
            let members: Vec<Waypoint> = idx.iter().map(|&i| waypoints[i].clone()).collect();
            Ok(WaypointCluster {
                id,
                kind: dominant_kind(&members),
                members,
                centroid: frame.from_local(&centroid_xy)?,
                radius,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Clustering {
        frame,
        clusters,
        noise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{AisRecord, Mmsi};

    pub(crate) fn track_from_velocities(vels: &[Vector2<f64>], dt: f64, with_sog: bool) -> Track {
        let frame = LocalFrame::new(GeoPosition::new(36.0, 14.0).unwrap());
        let mmsi = Mmsi::new(247_000_001).unwrap();
        let mut p = Vector2::zeros();
        let mut points = Vec::new();
        for (i, v) in vels.iter().enumerate() {
            points.push(AisRecord {
                t: i as f64 * dt,
                mmsi: Some(mmsi),
                pos: frame.from_local(&p).unwrap(),
                sog: with_sog.then(|| v.norm()),
                cog: with_sog.then(|| course_of(v)),
                ship_type: None,
                length: None,
                width: None,
            });
            p += v * dt;
        }
        Track { mmsi, points }
    }

    #[test]
    fn velocity_axis_convention() {
        let t = track_from_velocities(&[Vector2::new(0.0, 5.0), Vector2::new(5.0, 0.0)], 10.0, true);
        let v = velocity_sequence(&t).unwrap();
        assert!((v[0].1 - Vector2::new(0.0, 5.0)).norm() < 1e-12);
        assert!((v[1].1 - Vector2::new(5.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn finite_difference_velocity() {
        let t = track_from_velocities(&[Vector2::new(5.0, 0.0); 2], 600.0, false);
        let v = velocity_sequence(&t).unwrap();
        for (_, x) in v {
            assert!((x - Vector2::new(5.0, 0.0)).norm() < 1e-6, "{x}");
        }
    }

    #[test]
    fn short_track_rejected() {
        let t = track_from_velocities(&[Vector2::new(5.0, 0.0)], 600.0, true);
        assert!(velocity_sequence(&t).is_err());
    }

    #[test]
    fn constant_velocity_has_no_waypoints() {
        let t = track_from_velocities(&[Vector2::new(3.0, 4.0); 100], 60.0, true);
        assert!(detect_waypoints(&t, 0, &WaypointConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn clean_turn_gives_one_navigational_waypoint() {
        let mut v = vec![Vector2::new(5.0, 0.0); 50];
        v.extend(vec![Vector2::new(0.0, 5.0); 50]);
        let t = track_from_velocities(&v, 60.0, true);
        let wps = detect_waypoints(&t, 3, &WaypointConfig::default()).unwrap();
        assert_eq!(wps.len(), 1);
        assert_eq!(wps[0].kind, WaypointKind::Navigational);
        assert_eq!(wps[0].track_ref, 3);
        let idx = (wps[0].t / 60.0).round() as i64;
        assert!((idx - 50).abs() <= 10);
    }

    #[test]
    fn stopping_gives_one_port_waypoint() {
        let mut v = vec![Vector2::new(0.0, 5.0); 50];
        for k in 1..=10 {
            v.push(Vector2::new(0.0, 5.0 * (1.0 - k as f64 / 10.0)));
        }
        v.extend(vec![Vector2::zeros(); 50]);
        let t = track_from_velocities(&v, 60.0, true);
        let wps = detect_waypoints(&t, 0, &WaypointConfig::default()).unwrap();
        assert_eq!(wps.len(), 1, "{wps:?}");
        assert_eq!(wps[0].kind, WaypointKind::Port);
    }

    #[test]
    fn boundary_endpoints_become_entry_and_exit() {
        let v = vec![Vector2::new(5.0, 0.0); 60];
        let t = track_from_velocities(&v, 60.0, true);
        let frame = LocalFrame::new(GeoPosition::new(36.0, 14.0).unwrap());
        // Square whose west and east edges pass through the track ends.
        let end_x = 5.0 * 60.0 * 59.0;
        let corners = [(0.0, -5000.0), (end_x, -5000.0), (end_x, 5000.0), (0.0, 5000.0)];
        let polygon = corners
            .iter()
            .map(|&(x, y)| {
                let g = frame.from_local(&Vector2::new(x, y)).unwrap();
                [g.lat(), g.lon()]
            })
            .collect();
        let cfg = WaypointConfig {
            boundary: Some(Region { polygon, margin_m: 500.0 }),
            ..Default::default()
        };
        let wps = detect_waypoints(&t, 0, &cfg).unwrap();
        let kinds: Vec<_> = wps.iter().map(|w| w.kind).collect();
        assert_eq!(kinds, [WaypointKind::Entry, WaypointKind::Exit]);
    }

    #[test]
    fn degenerate_window_is_not_a_change() {
        let vel = vec![(0.0, Vector2::new(1.0, 1.0)); 40];
        let s = change_statistic(&vel, 10, 0.0);
        assert!(s.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn cluster_summary() {
        let frame = LocalFrame::new(GeoPosition::new(36.0, 14.0).unwrap());
        let wp = |x: f64, y: f64, kind| Waypoint {
            pos: frame.from_local(&Vector2::new(x, y)).unwrap(),
            t: 0.0,
            kind,
            v_before: Vector2::zeros(),
            v_after: Vector2::zeros(),
            track_ref: 0,
        };
        let wps = vec![
            wp(0.0, 0.0, WaypointKind::Navigational),
            wp(100.0, 0.0, WaypointKind::Navigational),
            wp(0.0, 100.0, WaypointKind::Port),
            wp(50_000.0, 0.0, WaypointKind::Port),
        ];
        let c = cluster_waypoints(&wps, &ClusterParams { eps: 500.0, min_pts: 3, course_scale_m_per_deg: None }).unwrap();
        assert_eq!(c.clusters.len(), 1);
        assert_eq!(c.noise.len(), 1);
        let cl = &c.clusters[0];
        assert_eq!(cl.members.len(), 3);
        assert_eq!(cl.kind, WaypointKind::Navigational);
        let centroid = c.frame.to_local(&cl.centroid) - c.frame.to_local(&wps[0].pos);
        assert!((centroid - Vector2::new(100.0 / 3.0, 100.0 / 3.0)).norm() < 1e-2);
    }

    #[test]
    fn course_feature_splits_opposite_traffic() {
        let frame = LocalFrame::new(GeoPosition::new(36.0, 14.0).unwrap());
        let wps: Vec<Waypoint> = (0..10)
            .map(|i| Waypoint {
                pos: frame.from_local(&Vector2::new(i as f64 * 10.0, 0.0)).unwrap(),
                t: 0.0,
                kind: WaypointKind::Navigational,
                v_before: Vector2::zeros(),
                v_after: if i % 2 == 0 { Vector2::new(1.0, 0.0) } else { Vector2::new(-1.0, 0.0) },
                track_ref: i,
            })
            .collect();
        let plain = cluster_waypoints(&wps, &ClusterParams { eps: 500.0, min_pts: 3, course_scale_m_per_deg: None }).unwrap();
        assert_eq!(plain.clusters.len(), 1);
        let with_course = cluster_waypoints(&wps, &ClusterParams { eps: 500.0, min_pts: 3, course_scale_m_per_deg: Some(20.0) }).unwrap();
        assert_eq!(with_course.clusters.len(), 2);
    }

    #[test]
    fn change_point_localization_rate() {
        use rand::{Rng, SeedableRng};
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let sigma = 0.5;
        let noise = Normal::new(0.0, sigma).unwrap();
        let w = 10;
        let trials = 500;
        let mut hits = 0;
        for _ in 0..trials {
            let n = 100;
            let k = rng.random_range(25..75);
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            let base = Vector2::new(4.0 * a.sin(), 4.0 * a.cos());
            let b = rng.random_range(0.0..std::f64::consts::TAU);
            let shift = Vector2::new(b.sin(), b.cos()) * 3.0 * sigma;
            let vel: Vec<(f64, Vector2<f64>)> = (0..n)
                .map(|i| {
                    let m = if i < k { base } else { base + shift };
                    (i as f64, m + Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng)))
                })
                .collect();
            let stat = change_statistic(&vel, w, 0.1);
            let cps = pick_change_points(&stat, 8.0, w, w);
            if cps.iter().any(|&c| c.abs_diff(k) <= w) {
                hits += 1;
            }
        }
        let rate = hits as f64 / trials as f64;
        assert!(rate >= 0.95, "localization rate {rate}");
    }
}
