use std::collections::BTreeMap;

use nalgebra::{DMatrix, Vector2};
use serde::{Deserialize, Serialize};

use super::waypoints::{velocity_sequence, Clustering, WaypointKind};
use crate::error::{Error, Result};
use crate::geo::{course_of, velocity_from_course, GeoPosition, LocalFrame};
use crate::io::Track;

/// Additive per-edge leg statistics, one sample per transit.
///
/// Keeping raw sums makes merging two edges a plain addition.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LegStats {
    pub n: f64,
    pub sum_speed: f64,
    pub sum_speed2: f64,
    pub sum_sin: f64,
    pub sum_cos: f64,
}

impl LegStats {
    pub fn from_velocity(v: &Vector2<f64>) -> Self {
        let c = course_of(v);
        let s = v.norm();
        Self {
            n: 1.0,
            sum_speed: s,
            sum_speed2: s * s,
            sum_sin: c.sin(),
            sum_cos: c.cos(),
        }
    }

    /// Rebuilds sums from summary statistics (inverse of the accessors).
    pub fn from_summary(n: f64, mean_speed: f64, speed_std: f64, mean_course: f64, course_std: f64) -> Self {
        let r = (-course_std * course_std / 2.0).exp();
        Self {
            n,
            sum_speed: n * mean_speed,
            sum_speed2: n * (speed_std * speed_std + mean_speed * mean_speed),
            sum_sin: n * r * mean_course.sin(),
            sum_cos: n * r * mean_course.cos(),
        }
    }

    pub fn merge(&self, o: &Self) -> Self {
        Self {
            n: self.n + o.n,
            sum_speed: self.sum_speed + o.sum_speed,
            sum_speed2: self.sum_speed2 + o.sum_speed2,
            sum_sin: self.sum_sin + o.sum_sin,
            sum_cos: self.sum_cos + o.sum_cos,
        }
    }

    pub fn mean_speed(&self) -> f64 {
        if self.n > 0.0 {
            self.sum_speed / self.n
        } else {
            0.0
        }
    }

    pub fn speed_std(&self) -> f64 {
        if self.n > 0.0 {
            (self.sum_speed2 / self.n - self.mean_speed().powi(2)).max(0.0).sqrt()
        } else {
            0.0
        }
    }

    /// Circular mean course in `[0, 2π)`.
    pub fn mean_course(&self) -> f64 {
        self.sum_sin.atan2(self.sum_cos).rem_euclid(std::f64::consts::TAU)
    }

    /// Circular standard deviation `sqrt(-2 ln R)` in radians.
    pub fn course_std(&self) -> f64 {
        if self.n <= 0.0 {
            return 0.0;
        }
        let r = (self.sum_sin.hypot(self.sum_cos) / self.n).min(1.0);
        if r <= 0.0 {
            f64::INFINITY
        } else {
            (-2.0 * r.ln()).max(0.0).sqrt()
        }
    }

    /// Mean leg velocity (east/north m/s).
    pub fn mean_velocity(&self) -> Vector2<f64> {
        velocity_from_course(self.mean_speed(), self.mean_course())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficNode {
    pub id: usize,
    pub centroid: GeoPosition,
    pub kind: WaypointKind,
    pub radius_m: f64,
    pub n_members: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficEdge {
    pub from: usize,
    pub to: usize,
    /// Number of transits.
    pub weight: u64,
    pub stats: LegStats,
}

/// Directed simple graph of traffic nodes with transit-count adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficGraph {
    pub frame_origin: GeoPosition,
    pub nodes: Vec<TrafficNode>,
    pub edges: Vec<TrafficEdge>,
    adjacency: DMatrix<u64>,
}

impl TrafficGraph {
    /// Builds a graph, checking node ids, endpoints and weights.
    pub fn new(frame_origin: GeoPosition, nodes: Vec<TrafficNode>, edges: Vec<TrafficEdge>) -> Result<Self> {
        let n = nodes.len();
        if let Some((i, node)) = nodes.iter().enumerate().find(|(i, node)| node.id != *i) {
            return Err(Error::validation(format!("node at index {i} has id {}", node.id)));
        }
        let mut adjacency = DMatrix::zeros(n, n);
        for e in &edges {
            if e.from >= n || e.to >= n {
                return Err(Error::validation(format!("edge ({}, {}) has an unknown endpoint", e.from, e.to)));
            }
            if e.from == e.to {
                return Err(Error::validation(format!("self-loop on node {}", e.from)));
            }
            if e.weight == 0 {
                return Err(Error::validation("edge weight must be >= 1"));
            }
            adjacency[(e.from, e.to)] += e.weight;
        }
        Ok(Self {
            frame_origin,
            nodes,
            edges,
            adjacency,
        })
    }

    pub fn frame(&self) -> LocalFrame {
        LocalFrame::new(self.frame_origin)
    }

    /// Transit counts; entry `(i, j)` sums the weights of all edges `i → j`.
    pub fn adjacency(&self) -> &DMatrix<u64> {
        &self.adjacency
    }

    pub fn out_edges(&self, node: usize) -> impl Iterator<Item = &TrafficEdge> {
        self.edges.iter().filter(move |e| e.from == node)
    }

    pub fn edge(&self, from: usize, to: usize) -> Option<&TrafficEdge> {
        self.edges.iter().find(|e| e.from == from && e.to == to)
    }

    /// Re-derives the graph invariants; used by tests and after loading.
    pub fn check_invariants(&self) -> Result<()> {
        let rebuilt = Self::new(self.frame_origin, self.nodes.clone(), self.edges.clone())?;
        if rebuilt.adjacency != self.adjacency {
            return Err(Error::validation("adjacency matrix out of sync with edges"));
        }
        Ok(())
    }
}

/// Builds the traffic graph from tracks and the clustering of their
/// waypoints. Each consecutive pair of distinct clusters visited by a track
/// adds one transit; noise waypoints are skipped.
pub fn build_graph(tracks: &[Track], clustering: &Clustering) -> Result<TrafficGraph> {
    let frame = clustering.frame;
    let nodes: Vec<TrafficNode> = clustering
        .clusters
        .iter()
        .map(|c| TrafficNode {
            id: c.id,
            centroid: c.centroid,
            kind: c.kind,
            radius_m: c.radius,
            n_members: c.members.len(),
        })
        .collect();

    // (time, cluster, position) per track
    let mut visits: BTreeMap<usize, Vec<(f64, usize, GeoPosition)>> = BTreeMap::new();
    for c in &clustering.clusters {
        for m in &c.members {
            if m.track_ref >= tracks.len() {
                return Err(Error::validation(format!("waypoint refers to unknown track {}", m.track_ref)));
            }
            visits.entry(m.track_ref).or_default().push((m.t, c.id, m.pos));
        }
    }

    let mut edges: BTreeMap<(usize, usize), TrafficEdge> = BTreeMap::new();
    for (tr, mut seq) in visits {
        seq.sort_by(|a, b| a.0.total_cmp(&b.0));
        seq.dedup_by(|b, a| a.1 == b.1);
        if seq.len() < 2 {
            continue;
        }
        let vel = velocity_sequence(&tracks[tr])?;
        for pair in seq.windows(2) {
            let (t0, i, p0) = pair[0];
            let (t1, j, p1) = pair[1];
            let leg: Vec<Vector2<f64>> = vel
                .iter()
                .filter(|(t, _)| *t >= t0 && *t <= t1)
                .map(|(_, v)| *v)
                .collect();
            let v = if leg.is_empty() || t1 <= t0 {
                let dt = (t1 - t0).max(1.0);
                (frame.to_local(&p1) - frame.to_local(&p0)) / dt
            } else {
                leg.iter().sum::<Vector2<f64>>() / leg.len() as f64
            };
            let s = LegStats::from_velocity(&v);
            edges
                .entry((i, j))
                .and_modify(|e| {
                    e.weight += 1;
                    e.stats = e.stats.merge(&s);
                })
                .or_insert(TrafficEdge {
                    from: i,
                    to: j,
                    weight: 1,
                    stats: s,
                });
        }
    }
    TrafficGraph::new(frame.origin(), nodes, edges.into_values().collect())
}

/// Merges parallel edges, drops edges lighter than `w_min`, then drops
/// isolated nodes and renumbers the rest in their original order.
pub fn prune_and_merge(graph: &TrafficGraph, w_min: u64) -> Result<TrafficGraph> {
    if w_min < 1 {
        return Err(Error::validation("w_min must be >= 1"));
    }
    let mut merged: BTreeMap<(usize, usize), TrafficEdge> = BTreeMap::new();
    for e in &graph.edges {
        merged
            .entry((e.from, e.to))
            .and_modify(|m| {
                m.weight += e.weight;
                m.stats = m.stats.merge(&e.stats);
            })
            .or_insert_with(|| e.clone());
    }
    let kept: Vec<TrafficEdge> = merged.into_values().filter(|e| e.weight >= w_min).collect();

    let mut used = vec![false; graph.nodes.len()];
    for e in &kept {
        used[e.from] = true;
        used[e.to] = true;
    }
    let mut remap = vec![usize::MAX; graph.nodes.len()];
    let mut nodes = Vec::new();
    for (old, node) in graph.nodes.iter().enumerate() {
        if used[old] {
            remap[old] = nodes.len();
            nodes.push(TrafficNode {
                id: nodes.len(),
                ..node.clone()
            });
        }
    }
    let edges = kept
        .into_iter()
        .map(|e| TrafficEdge {
            from: remap[e.from],
            to: remap[e.to],
            ..e
        })
        .collect();
    TrafficGraph::new(graph.frame_origin, nodes, edges)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginDoc {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDoc {
    pub id: usize,
    pub lat: f64,
    pub lon: f64,
    pub kind: WaypointKind,
    pub radius_m: f64,
    pub n_members: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeDoc {
    pub from: usize,
    pub to: usize,
    pub weight: u64,
    pub mean_speed_mps: f64,
    pub mean_course_deg: f64,
    pub speed_std: f64,
    /// Degrees.
    pub course_std: f64,
}

/// On-disk JSON form of a [`TrafficGraph`]; angles in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub frame_origin: OriginDoc,
    pub nodes: Vec<NodeDoc>,
    pub edges: Vec<EdgeDoc>,
}

impl From<&TrafficGraph> for GraphDocument {
    fn from(g: &TrafficGraph) -> Self {
        Self {
            frame_origin: OriginDoc {
                lat: g.frame_origin.lat(),
                lon: g.frame_origin.lon(),
            },
            nodes: g
                .nodes
                .iter()
                .map(|n| NodeDoc {
                    id: n.id,
                    lat: n.centroid.lat(),
                    lon: n.centroid.lon(),
                    kind: n.kind,
                    radius_m: n.radius_m,
                    n_members: n.n_members,
                })
                .collect(),
            edges: g
                .edges
                .iter()
                .map(|e| EdgeDoc {
                    from: e.from,
                    to: e.to,
                    weight: e.weight,
                    mean_speed_mps: e.stats.mean_speed(),
                    mean_course_deg: e.stats.mean_course().to_degrees(),
                    speed_std: e.stats.speed_std(),
                    course_std: e.stats.course_std().to_degrees(),
                })
                .collect(),
        }
    }
}

impl TryFrom<GraphDocument> for TrafficGraph {
    type Error = Error;

    fn try_from(d: GraphDocument) -> Result<Self> {
        let nodes = d
            .nodes
            .into_iter()
            .map(|n| {
                Ok(TrafficNode {
                    id: n.id,
                    centroid: GeoPosition::new(n.lat, n.lon)?,
                    kind: n.kind,
                    radius_m: n.radius_m,
                    n_members: n.n_members,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let edges = d
            .edges
            .into_iter()
            .map(|e| {
                if !(e.mean_speed_mps >= 0.0 && e.speed_std >= 0.0 && e.course_std >= 0.0) {
                    return Err(Error::validation("edge statistics must be non-negative"));
                }
                Ok(TrafficEdge {
                    from: e.from,
                    to: e.to,
                    weight: e.weight,
                    stats: LegStats::from_summary(
                        e.weight as f64,
                        e.mean_speed_mps,
                        e.speed_std,
                        e.mean_course_deg.to_radians(),
                        e.course_std.to_radians(),
                    ),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        TrafficGraph::new(GeoPosition::new(d.frame_origin.lat, d.frame_origin.lon)?, nodes, edges)
    }
}

impl TrafficGraph {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&GraphDocument::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<GraphDocument>(s)?.try_into()
    }
}
