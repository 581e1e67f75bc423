//! Density-based clustering (DBSCAN) with a uniform-grid neighbor index.
//!
//! Points carry `D ≥ 2` coordinates; the grid indexes the first two, which
//! is sufficient because the full Euclidean distance is never smaller than
//! the planar one. A point's neighborhood includes the point itself.

use std::collections::HashMap;

/// Cluster label per input point (`None` = noise) and the core flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DbscanResult {
    pub labels: Vec<Option<usize>>,
    pub core: Vec<bool>,
    pub n_clusters: usize,
}

struct Grid {
    cell: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl Grid {
    fn key(&self, x: f64, y: f64) -> (i64, i64) {
        ((x / self.cell).floor() as i64, (y / self.cell).floor() as i64)
    }
}

fn dist2<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Clusters `points` with radius `eps` and density threshold `min_pts`.
///
/// Points are scanned in input order and clusters numbered in order of
/// discovery; a border point reachable from several clusters joins the first
/// one that claims it.
pub fn dbscan<const D: usize>(points: &[[f64; D]], eps: f64, min_pts: usize) -> DbscanResult {
    assert!(D >= 2, "dbscan needs at least two coordinates");
    assert!(eps > 0.0 && min_pts >= 1, "eps must be > 0 and min_pts >= 1");
    let n = points.len();
    let mut grid = Grid {
        cell: eps,
        cells: HashMap::new(),
    };
    for (i, p) in points.iter().enumerate() {
        let k = grid.key(p[0], p[1]);
        grid.cells.entry(k).or_default().push(i);
    }
    let eps2 = eps * eps;
    let neighbors = |i: usize| -> Vec<usize> {
        let p = &points[i];
        let (cx, cy) = grid.key(p[0], p[1]);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(bucket) = grid.cells.get(&(cx + dx, cy + dy)) {
                    out.extend(bucket.iter().copied().filter(|&j| dist2(p, &points[j]) <= eps2));
                }
            }
        }
        out.sort_unstable();
        out
    };

    let hoods: Vec<Vec<usize>> = (0..n).map(neighbors).collect();
    let core: Vec<bool> = hoods.iter().map(|h| h.len() >= min_pts).collect();
    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut n_clusters = 0;

    for i in 0..n {
        if visited[i] || !core[i] {
            continue;
        }
        let c = n_clusters;
        n_clusters += 1;
        visited[i] = true;
        labels[i] = Some(c);
        let mut stack = vec![i];
        while let Some(q) = stack.pop() {
            for &r in &hoods[q] {
                if labels[r].is_none() {
                    labels[r] = Some(c);
                }
                if core[r] && !visited[r] {
                    visited[r] = true;
                    stack.push(r);
                }
            }
        }
    }
    DbscanResult {
        labels,
        core,
        n_clusters,
    }
}
