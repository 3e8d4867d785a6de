//! Device placement and the undirected communication graph.

use std::collections::{BTreeSet, VecDeque};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::linalg::Mat;

/// Default device coordinates in meters (12 devices).
pub const TABLE_COORDS: [(f64, f64); 12] = [
    (2196.0, 1351.0),
    (3637.0, 3127.0),
    (2642.0, 284.0),
    (2884.0, 848.0),
    (5254.0, 596.0),
    (1730.0, 1923.0),
    (3572.0, 2668.0),
    (4546.0, 5326.0),
    (4328.0, 4001.0),
    (2534.0, 5171.0),
    (173.0, 575.0),
    (2050.0, 3676.0),
];

/// Label-group assignment that accompanies [`TABLE_COORDS`] (groups 1..=8).
pub const TABLE_GROUPS: [usize; 12] = [1, 2, 3, 4, 5, 6, 7, 8, 2, 8, 4, 6];

/// An undirected simple graph over positioned devices.
///
/// Edges are stored as ordered pairs `(a, b)` with `a < b`; devices are
/// indexed from zero internally and reported from one in exported files.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    coords: Vec<(f64, f64)>,
    edges: BTreeSet<(usize, usize)>,
    requested_density: Option<f64>,
    scale: f64,
}

impl Topology {
    /// The first `n` rows of the default coordinate table, no edges.
    pub fn from_table(n: usize) -> Result<Self> {
        if n == 0 || n > TABLE_COORDS.len() {
            return invalid(format!(
                "n_devices must be in 1..={} for the default table, got {n}",
                TABLE_COORDS.len()
            ));
        }
        Self::from_coords(TABLE_COORDS[..n].to_vec())
    }

    pub fn from_coords(coords: Vec<(f64, f64)>) -> Result<Self> {
        if coords.is_empty() {
            return invalid("topology needs at least one device");
        }
        if coords.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return invalid("device coordinates must be finite");
        }
        Ok(Self {
            coords,
            edges: BTreeSet::new(),
            requested_density: None,
            scale: 1.0,
        })
    }

    /// Replace the edge set with an explicit list of undirected pairs.
    pub fn with_edges(mut self, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let n = self.n_devices();
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return invalid(format!("self-loop at device {a}"));
            }
            if a >= n || b >= n {
                return invalid(format!("edge ({a}, {b}) out of range for {n} devices"));
            }
            set.insert((a.min(b), a.max(b)));
        }
        self.edges = set;
        self.requested_density = None;
        Ok(self)
    }

    /// Keep the `round(ρ·N(N−1)/2)` shortest device pairs as edges (ties
    /// broken by `rng`), then swap long edges for short bridging edges until
    /// the graph is connected.
    pub fn build_edges_by_density<R: Rng + ?Sized>(&self, rho: f64, rng: &mut R) -> Result<Self> {
        if !(rho > 0.0 && rho <= 1.0) {
            return invalid(format!("density must be in (0, 1], got {rho}"));
        }
        let n = self.n_devices();
        let max_pairs = n * (n - 1) / 2;
        let target = edge_target(rho, n);
        if target + 1 < n {
            return Err(Error::InfeasibleDensity(format!(
                "{target} edges cannot connect {n} devices (need at least {})",
                n - 1
            )));
        }
        debug_assert!(target <= max_pairs);

        let mut pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .collect();
        pairs.shuffle(rng);
        pairs.sort_by(|&(a, b), &(c, d)| self.distance(a, b).total_cmp(&self.distance(c, d)));

        let mut chosen: BTreeSet<(usize, usize)> = pairs[..target].iter().copied().collect();
        loop {
            let comps = components(n, &chosen);
            let n_comps = comps.iter().max().map_or(0, |m| m + 1);
            if n_comps <= 1 {
                break;
            }
            let bridge = pairs
                .iter()
                .copied()
                .find(|&(a, b)| comps[a] != comps[b])
                .expect("a disconnected graph always has a bridging pair");
            // The chosen set has at least N−1 edges over more than one
            // component, so some chosen edge sits on a cycle.
            let drop = chosen
                .iter()
                .copied()
                .filter(|&e| {
                    let mut without = chosen.clone();
                    without.remove(&e);
                    components(n, &without).iter().max() == comps.iter().max()
                })
                .max_by(|&(a, b), &(c, d)| {
                    self.distance(a, b).total_cmp(&self.distance(c, d))
                })
                .expect("a cycle edge exists when edges >= N-1 and graph is disconnected");
            chosen.remove(&drop);
            chosen.insert(bridge);
        }

        Ok(Self {
            coords: self.coords.clone(),
            edges: chosen,
            requested_density: Some(rho),
            scale: self.scale,
        })
    }

    /// Multiply every coordinate by `kappa`; edges are unchanged.
    pub fn scale(&self, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return invalid(format!("scale factor must be positive, got {kappa}"));
        }
        Ok(Self {
            coords: self.coords.iter().map(|&(x, y)| (x * kappa, y * kappa)).collect(),
            edges: self.edges.clone(),
            requested_density: self.requested_density,
            scale: self.scale * kappa,
        })
    }

    pub fn n_devices(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[(f64, f64)] {
        &self.coords
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    /// Realized edge density `|E| / (N(N−1)/2)`; 1 for a single device.
    pub fn density(&self) -> f64 {
        let n = self.n_devices();
        if n < 2 {
            return 1.0;
        }
        self.edges.len() as f64 / (n * (n - 1) / 2) as f64
    }

    pub fn requested_density(&self) -> Option<f64> {
        self.requested_density
    }

    /// Cumulative scaling factor applied since construction.
    pub fn scale_factor(&self) -> f64 {
        self.scale
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (xa, ya) = self.coords[a];
        let (xb, yb) = self.coords[b];
        (xa - xb).hypot(ya - yb)
    }

    pub fn neighbors(&self, n: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(a, b)| match (a == n, b == n) {
                (true, _) => Some(b),
                (_, true) => Some(a),
                _ => None,
            })
            .collect()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_devices()];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    pub fn max_degree(&self) -> usize {
        self.degrees().into_iter().max().unwrap_or(0)
    }

    pub fn is_connected(&self) -> bool {
        components(self.n_devices(), &self.edges)
            .iter()
            .all(|&c| c == 0)
    }

    /// Unweighted graph Laplacian `D − A`.
    pub fn laplacian(&self) -> Mat {
        let n = self.n_devices();
        let mut l = Mat::zeros(n, n);
        for &(a, b) in &self.edges {
            l[(a, b)] = -1.0;
            l[(b, a)] = -1.0;
            l[(a, a)] += 1.0;
            l[(b, b)] += 1.0;
        }
        l
    }

    /// Hop-shortest path from every device to `center` (inclusive of both
    /// ends), or `None` when unreachable. Ties go to the lower-indexed parent.
    pub fn shortest_paths_to(&self, center: usize) -> Vec<Option<Vec<usize>>> {
        let n = self.n_devices();
        let mut parent = vec![usize::MAX; n];
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([center]);
        seen[center] = true;
        let adj: Vec<Vec<usize>> = (0..n).map(|v| self.neighbors(v)).collect();
        while let Some(v) = queue.pop_front() {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    parent[u] = v;
                    queue.push_back(u);
                }
            }
        }
        (0..n)
            .map(|start| {
                if !seen[start] {
                    return None;
                }
                let mut path = vec![start];
                let mut v = start;
                while v != center {
                    v = parent[v];
                    path.push(v);
                }
                Some(path)
            })
            .collect()
    }

    /// Adjacency list as CSV (`src,dst,distance_m`, one-based device ids).
    pub fn write_adjacency_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "src,dst,distance_m")?;
        for &(a, b) in &self.edges {
            writeln!(out, "{},{},{}", a + 1, b + 1, self.distance(a, b))?;
        }
        Ok(())
    }
}

/// Round-half-up of `ρ·N(N−1)/2`, capped at the number of pairs.
pub fn edge_target(rho: f64, n: usize) -> usize {
    let max_pairs = n * n.saturating_sub(1) / 2;
    ((rho * max_pairs as f64 + 0.5).floor() as usize).min(max_pairs)
}

/// Component label per vertex, labels dense from zero in first-seen order.
fn components(n: usize, edges: &BTreeSet<(usize, usize)>) -> Vec<usize> {
    let mut uf = UnionFind::new(n);
    for &(a, b) in edges {
        uf.union(a, b);
    }
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    let mut out = vec![0; n];
    for v in 0..n {
        let r = uf.find(v);
        if label[r] == usize::MAX {
            label[r] = next;
            next += 1;
        }
        out[v] = label[r];
    }
    out
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut v: usize) -> usize {
        while self.parent[v] != v {
            self.parent[v] = self.parent[self.parent[v]];
            v = self.parent[v];
        }
        v
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}
