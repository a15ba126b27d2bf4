//! Conformal distances `e^w ⊙ d` on mesh graphs.
//!
//! Edge lengths are Riemannian lengths of straight chart segments under the
//! endpoint-averaged metric, scaled by `e^{w}` at the edge midpoint (the
//! average of the endpoint values). Shortest paths use Dijkstra's algorithm;
//! the dual formulation `sup {φ(x) - φ(y) : |φ(u) - φ(v)| ≤ len(u,v)}` is
//! solved by an independent label-correcting sweep.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::mesh::{Mesh, MetricField, ScalarField};

/// Relative slack for comparisons that hold exactly in real arithmetic.
pub const EXACT_SLACK: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct PathGraph {
    mesh: Option<Arc<Mesh>>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl PathGraph {
    /// Undirected graph from explicit edges; lengths must be positive.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); n];
        for &(u, v, len) in edges {
            if u >= n || v >= n {
                return Err(Error::NodeOutOfRange { node: u.max(v), len: n });
            }
            if !(len > 0.0) || !len.is_finite() {
                return Err(Error::InvalidArgument(format!("edge ({u}, {v}) has length {len}")));
            }
            if u == v {
                continue;
            }
            adjacency[u].push((v, len));
            adjacency[v].push((u, len));
        }
        for row in &mut adjacency {
            row.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        }
        Ok(Self { mesh: None, adjacency })
    }

    /// Mesh adjacency graph of `e^w ⊙ d_g`; `diagonals` adds the two
    /// diagonal edges of every cell in 2-D.
    pub fn build(metric: &MetricField, w: &ScalarField, diagonals: bool) -> Result<Self> {
        let mesh = metric.mesh().clone();
        if mesh.as_ref() != w.mesh().as_ref() {
            return Err(Error::MeshMismatch { expected: mesh.len(), found: w.len() });
        }
        let dim = mesh.dimension();
        let mut offsets: Vec<(isize, isize)> = vec![(1, 0)];
        if dim == 2 {
            offsets.push((0, 1));
            if diagonals {
                offsets.push((1, 1));
                offsets.push((1, -1));
            }
        }
        let h = mesh.spacing();
        let mut edges = Vec::with_capacity(mesh.len() * offsets.len());
        for u in 0..mesh.len() {
            for &(dx, dy) in &offsets {
                let v = mesh.offset(u, dx, dy);
                let delta = [dx as f64 * h[0], if dim == 2 { dy as f64 * h[1] } else { 0.0 }];
                let g = linalg::scale(&linalg::add(metric.at(u), metric.at(v)), 0.5);
                let base = linalg::quad_form(&g, &delta, &delta, dim).sqrt();
                let scale = (0.5 * (w.values()[u] + w.values()[v])).exp();
                edges.push((u, v, base * scale));
            }
        }
        let mut graph = Self::from_edges(mesh.len(), &edges)?;
        graph.mesh = Some(mesh);
        Ok(graph)
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn mesh(&self) -> Option<&Arc<Mesh>> {
        self.mesh.as_ref()
    }

    pub fn neighbors(&self, u: usize) -> &[(usize, f64)] {
        &self.adjacency[u]
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(u, row)| row.iter().filter(move |(v, _)| *v > u).map(move |&(v, l)| (u, v, l)))
    }

    fn check_node(&self, node: usize) -> Result<()> {
        if node < self.len() {
            Ok(())
        } else {
            Err(Error::NodeOutOfRange { node, len: self.len() })
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
struct HeapItem {
    dist: f64,
    node: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed for a min-heap; ties go to the smaller node index
        other.dist.total_cmp(&self.dist).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source shortest-path tree.
#[derive(Debug, Clone)]
pub struct ShortestPaths {
    pub source: usize,
    pub dist: Vec<f64>,
    pub parent: Vec<Option<usize>>,
}

impl ShortestPaths {
    /// Node sequence from the source to `target`.
    pub fn path_to(&self, target: usize) -> Result<Vec<usize>> {
        if !self.dist[target].is_finite() {
            return Err(Error::Disconnected { from: self.source, to: target });
        }
        let mut path = vec![target];
        let mut cur = target;
        while let Some(p) = self.parent[cur] {
            path.push(p);
            cur = p;
        }
        path.reverse();
        Ok(path)
    }
}

pub fn shortest_paths(graph: &PathGraph, source: usize) -> Result<ShortestPaths> {
    let (dist, parent) = multi_source(graph, &[(source, 0.0)], None)?;
    Ok(ShortestPaths { source, dist, parent })
}

/// Shortest paths from `source` using only nodes with `allowed[node]`.
pub fn shortest_paths_within(graph: &PathGraph, source: usize, allowed: &[bool]) -> Result<ShortestPaths> {
    if allowed.len() != graph.len() {
        return Err(Error::InvalidArgument(format!("mask has {} entries for {} nodes", allowed.len(), graph.len())));
    }
    if !allowed[source] {
        return Err(Error::InvalidArgument(format!("source {source} is not an allowed node")));
    }
    let (dist, parent) = multi_source(graph, &[(source, 0.0)], Some(allowed))?;
    Ok(ShortestPaths { source, dist, parent })
}

/// Distances `min_s (d₀(s) + d(s, ·))` from seeds `(s, d₀(s))`.
pub fn multi_source_distances(graph: &PathGraph, seeds: &[(usize, f64)]) -> Result<Vec<f64>> {
    Ok(multi_source(graph, seeds, None)?.0)
}

#[allow(clippy::type_complexity)]
fn multi_source(graph: &PathGraph, seeds: &[(usize, f64)], allowed: Option<&[bool]>) -> Result<(Vec<f64>, Vec<Option<usize>>)> {
    let n = graph.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut parent = vec![None; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    for &(s, d0) in seeds {
        graph.check_node(s)?;
        if !(d0 >= 0.0) {
            return Err(Error::InvalidArgument(format!("seed offset {d0} at node {s} is negative")));
        }
        if d0 < dist[s] {
            dist[s] = d0;
            heap.push(HeapItem { dist: d0, node: s });
        }
    }
    while let Some(HeapItem { dist: d, node: u }) = heap.pop() {
        if done[u] {
            continue;
        }
        done[u] = true;
        for &(v, len) in graph.neighbors(u) {
            let nd = d + len;
            if allowed.is_some_and(|a| !a[v]) {
                continue;
            }
            let better = nd < dist[v] || (nd == dist[v] && parent[v].is_some_and(|p| u < p));
            if !done[v] && better {
                dist[v] = nd;
                parent[v] = Some(u);
                heap.push(HeapItem { dist: nd, node: v });
            }
        }
    }
    Ok((dist, parent))
}

pub fn conformal_distance(graph: &PathGraph, x: usize, y: usize) -> Result<f64> {
    graph.check_node(y)?;
    let sp = shortest_paths(graph, x)?;
    let d = sp.dist[y];
    if d.is_finite() {
        Ok(d)
    } else {
        Err(Error::Disconnected { from: x, to: y })
    }
}

pub fn shortest_path(graph: &PathGraph, x: usize, y: usize) -> Result<(f64, Vec<usize>)> {
    graph.check_node(y)?;
    let sp = shortest_paths(graph, x)?;
    let path = sp.path_to(y)?;
    Ok((sp.dist[y], path))
}

/// Maximal 1-Lipschitz potential vanishing at `y`: the fixed point of
/// `φ(u) = min_v φ(v) + len(u,v)`, reached by alternating forward and
/// backward Gauss–Seidel sweeps.
pub fn dual_potential(graph: &PathGraph, y: usize) -> Result<Vec<f64>> {
    graph.check_node(y)?;
    let n = graph.len();
    let mut phi = vec![f64::INFINITY; n];
    phi[y] = 0.0;
    let relax = |phi: &mut Vec<f64>, u: usize| -> bool {
        let best = graph.neighbors(u).iter().map(|&(v, l)| phi[v] + l).fold(phi[u], f64::min);
        if best < phi[u] {
            phi[u] = best;
            true
        } else {
            false
        }
    };
    // each sweep pair extends every shortest path by at least one edge
    let cap = n + 1;
    for _ in 0..cap {
        let mut changed = false;
        for u in 0..n {
            changed |= relax(&mut phi, u);
        }
        for u in (0..n).rev() {
            changed |= relax(&mut phi, u);
        }
        if !changed {
            if let Some(u) = phi.iter().position(|p| !p.is_finite()) {
                return Err(Error::Disconnected { from: u, to: y });
            }
            return Ok(phi);
        }
    }
    Err(Error::Solver(format!("dual sweeps did not converge within {cap} iterations")))
}

/// Largest `|φ(u) - φ(v)| / len(u,v)` over all edges.
pub fn lipschitz_constant(graph: &PathGraph, phi: &[f64]) -> f64 {
    graph.edges().map(|(u, v, l)| (phi[u] - phi[v]).abs() / l).fold(0.0, f64::max)
}

pub fn dual_distance(graph: &PathGraph, x: usize, y: usize) -> Result<f64> {
    graph.check_node(x)?;
    let phi = dual_potential(graph, y)?;
    let lip = lipschitz_constant(graph, &phi);
    if lip > 1.0 + EXACT_SLACK {
        return Err(Error::Invariant(format!("dual potential has Lipschitz constant {lip}")));
    }
    Ok(phi[x] - phi[y])
}

#[derive(Debug, Clone, Serialize)]
pub struct DistanceReport {
    pub source: usize,
    pub target: usize,
    pub primal: f64,
    pub dual: f64,
    pub relative_gap: f64,
    pub path: Vec<usize>,
}

impl DistanceReport {
    pub fn agrees(&self) -> bool {
        self.relative_gap <= EXACT_SLACK
    }
}

pub fn distance_report(graph: &PathGraph, x: usize, y: usize) -> Result<DistanceReport> {
    let (primal, path) = shortest_path(graph, x, y)?;
    let dual = dual_distance(graph, x, y)?;
    Ok(DistanceReport { source: x, target: y, primal, dual, relative_gap: relative_gap(primal, dual), path })
}

fn relative_gap(a: f64, b: f64) -> f64 {
    let diff = (a - b).abs();
    if diff == 0.0 {
        0.0
    } else {
        diff / a.abs().max(b.abs())
    }
}

/// Primal and dual distances for many pairs, sharing one shortest-path tree
/// per source and one dual potential per target.
pub fn distance_reports(graph: &PathGraph, pairs: &[(usize, usize)]) -> Result<Vec<DistanceReport>> {
    let mut by_source: BTreeMap<usize, ShortestPaths> = BTreeMap::new();
    let mut by_target: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for &(x, y) in pairs {
        if let std::collections::btree_map::Entry::Vacant(e) = by_source.entry(x) {
            e.insert(shortest_paths(graph, x)?);
        }
        if let std::collections::btree_map::Entry::Vacant(e) = by_target.entry(y) {
            let phi = dual_potential(graph, y)?;
            let lip = lipschitz_constant(graph, &phi);
            if lip > 1.0 + EXACT_SLACK {
                return Err(Error::Invariant(format!("dual potential has Lipschitz constant {lip}")));
            }
            e.insert(phi);
        }
    }
    pairs
        .iter()
        .map(|&(x, y)| {
            let sp = &by_source[&x];
            let primal = sp.dist[y];
            let dual = by_target[&y][x];
            Ok(DistanceReport { source: x, target: y, primal, dual, relative_gap: relative_gap(primal, dual), path: sp.path_to(y)? })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub pairs: usize,
    pub w_min: f64,
    pub w_max: f64,
    pub violations: usize,
    /// Smallest `d^w / (e^{min w} d)` observed.
    pub min_lower_ratio: f64,
    /// Largest `d^w / (e^{max w} d)` observed.
    pub max_upper_ratio: f64,
    pub pass: bool,
}

/// Checks `e^{min w} d ≤ d^w ≤ e^{max w} d` on every pair, where `d` is the
/// distance with `w = 0` on the same mesh graph.
pub fn comparison_bounds_check(metric: &MetricField, w: &ScalarField, pairs: &[(usize, usize)], diagonals: bool) -> Result<ComparisonReport> {
    let zero = ScalarField::constant(metric.mesh().clone(), 0.0)?;
    let base = PathGraph::build(metric, &zero, diagonals)?;
    let weighted = PathGraph::build(metric, w, diagonals)?;
    let (w_min, w_max) = (w.min(), w.max());
    let mut sources: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut violations = 0;
    let mut min_lower_ratio = f64::INFINITY;
    let mut max_upper_ratio = 0.0f64;
    for &(x, y) in pairs {
        if let std::collections::btree_map::Entry::Vacant(e) = sources.entry(x) {
            e.insert((shortest_paths(&base, x)?.dist, shortest_paths(&weighted, x)?.dist));
        }
        let (d0, dw) = &sources[&x];
        let (d, dw) = (d0[y], dw[y]);
        if !d.is_finite() {
            return Err(Error::Disconnected { from: x, to: y });
        }
        if d == 0.0 {
            continue;
        }
        let lo = w_min.exp() * d;
        let hi = w_max.exp() * d;
        if dw < lo * (1.0 - EXACT_SLACK) || dw > hi * (1.0 + EXACT_SLACK) {
            violations += 1;
        }
        min_lower_ratio = min_lower_ratio.min(dw / lo);
        max_upper_ratio = max_upper_ratio.max(dw / hi);
    }
    Ok(ComparisonReport { pairs: pairs.len(), w_min, w_max, violations, min_lower_ratio, max_upper_ratio, pass: violations == 0 })
}

pub fn write_path_csv<W: Write>(graph: &PathGraph, path: &[usize], mut out: W) -> Result<()> {
    let mesh = graph.mesh().ok_or_else(|| Error::InvalidArgument("graph has no mesh coordinates".into()))?;
    writeln!(out, "step,node,x,y")?;
    for (k, &node) in path.iter().enumerate() {
        let x = mesh.coordinates(node);
        writeln!(out, "{k},{node},{},{}", x[0], x[1])?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct VolumeGrowthVerdict {
    /// Window `[r_max/2, r_max]` on which condition (i) is read.
    pub radius_window: (f64, f64),
    /// Window `[f(r_max)/2, f(r_max)]` on which condition (ii) is read.
    pub range_window: (f64, f64),
    pub min_f_over_r: f64,
    pub end_f_over_r: f64,
    pub mid_f_over_r: f64,
    pub mid_ratio: f64,
    pub end_ratio: f64,
    pub condition_i: bool,
    pub condition_ii: bool,
    pub satisfied: bool,
}

/// Floor for `f(r)/r` on the tail window in condition (i).
pub const GROWTH_RATIO_FLOOR: f64 = 1e-3;

/// Fraction of `f(r)/r` that must survive from the middle to the end of the
/// radius window in condition (i); `f(r) ~ r^α` fails for `α < 0.85`.
pub const GROWTH_RATIO_RETENTION: f64 = 0.9;

/// Largest admissible growth of `p(f⁻¹(r))/r²` between the middle and the
/// end of the range window in condition (ii).
pub const GROWTH_RATIO_CAP: f64 = 2.0;

/// Finite-window reading of the volume-growth criterion with
/// `f(r) = ∫₀^r e^{-q(s)} ds`:
/// (i) `f(r)/r` stays above a floor and retains 90% of its value across
/// the tail;
/// (ii) `p(f⁻¹(r))/r²` grows by at most a factor 2 across the tail of the
/// range of `f`.
pub fn volume_growth_condition(p: impl Fn(f64) -> f64, q: impl Fn(f64) -> f64, r_max: f64, grid: usize) -> Result<VolumeGrowthVerdict> {
    if !(r_max > 0.0) || !r_max.is_finite() || grid < 4 {
        return Err(Error::InvalidArgument(format!("need r_max > 0 and grid ≥ 4, got {r_max} and {grid}")));
    }
    let h = r_max / grid as f64;
    let r: Vec<f64> = (0..=grid).map(|k| k as f64 * h).collect();
    let mut f = vec![0.0; grid + 1];
    let mut prev = (-q(0.0)).exp();
    for k in 1..=grid {
        let qk = q(r[k]);
        if !(qk >= 0.0) || !qk.is_finite() {
            return Err(Error::Domain(format!("q({}) = {qk} is not a finite nonnegative value", r[k])));
        }
        let cur = (-qk).exp();
        f[k] = f[k - 1] + 0.5 * h * (prev + cur);
        if !(f[k] > f[k - 1]) {
            return Err(Error::Quadrature(format!("f is not increasing at r = {}", r[k])));
        }
        prev = cur;
    }
    let half = grid / 2;
    let ratios: Vec<f64> = (half..=grid).map(|k| f[k] / r[k]).collect();
    let min_f_over_r = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let (mid_f_over_r, end_f_over_r) = (ratios[0], *ratios.last().unwrap());
    let condition_i = min_f_over_r >= GROWTH_RATIO_FLOOR && end_f_over_r >= GROWTH_RATIO_RETENTION * mid_f_over_r;

    let f_end = f[grid];
    let finv = |y: f64| -> f64 {
        let k = f.partition_point(|&v| v < y).clamp(1, grid);
        let t = (y - f[k - 1]) / (f[k] - f[k - 1]);
        r[k - 1] + t * (r[k] - r[k - 1])
    };
    let ratio_at = |y: f64| -> Result<f64> {
        let pv = p(finv(y));
        if !(pv >= 0.0) {
            return Err(Error::Domain(format!("p is negative or undefined near f⁻¹({y})")));
        }
        Ok(pv / (y * y))
    };
    let mid_ratio = ratio_at(0.5 * f_end)?;
    let end_ratio = ratio_at(f_end)?;
    let condition_ii = end_ratio.is_finite() && end_ratio <= GROWTH_RATIO_CAP * mid_ratio.max(f64::MIN_POSITIVE) || end_ratio == 0.0;
    Ok(VolumeGrowthVerdict {
        radius_window: (r[half], r_max),
        range_window: (0.5 * f_end, f_end),
        min_f_over_r,
        end_f_over_r,
        mid_f_over_r,
        mid_ratio,
        end_ratio,
        condition_i,
        condition_ii,
        satisfied: condition_i && condition_ii,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_circle_mesh, build_torus_mesh, sample_scalar};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn flat_graph(mesh: &Arc<Mesh>, w: &ScalarField, diag: bool) -> PathGraph {
        PathGraph::build(&MetricField::flat(mesh), w, diag).unwrap()
    }

    #[test]
    fn circle_distance_is_arc_length() {
        let mesh = build_circle_mesh(64, 2.0 * PI).unwrap();
        let z = ScalarField::constant(mesh.clone(), 0.0).unwrap();
        let g = flat_graph(&mesh, &z, false);
        let h = 2.0 * PI / 64.0;
        assert!((conformal_distance(&g, 0, 10).unwrap() - 10.0 * h).abs() < 1e-12);
        assert!((conformal_distance(&g, 0, 60).unwrap() - 4.0 * h).abs() < 1e-12);
        assert!((conformal_distance(&g, 3, 35).unwrap() - PI).abs() < 1e-12);
    }

    #[test]
    fn constant_weight_scales_distance() {
        let mesh = build_torus_mesh(16, 16, 1.0, 1.0).unwrap();
        let z = ScalarField::constant(mesh.clone(), 0.0).unwrap();
        let c = ScalarField::constant(mesh.clone(), 0.7).unwrap();
        let g0 = flat_graph(&mesh, &z, true);
        let gc = flat_graph(&mesh, &c, true);
        for (x, y) in [(0, 100), (5, 200), (17, 17)] {
            let a = conformal_distance(&g0, x, y).unwrap();
            let b = conformal_distance(&gc, x, y).unwrap();
            assert!((b - 0.7f64.exp() * a).abs() <= 1e-14 * b.max(1.0));
        }
    }

    #[test]
    fn single_edge_and_disconnected() {
        let g = PathGraph::from_edges(2, &[(0, 1, 2.5)]).unwrap();
        assert_eq!(dual_distance(&g, 0, 1).unwrap(), 2.5);
        assert_eq!(conformal_distance(&g, 1, 0).unwrap(), 2.5);
        let g = PathGraph::from_edges(3, &[(0, 1, 1.0)]).unwrap();
        assert!(matches!(conformal_distance(&g, 0, 2), Err(Error::Disconnected { .. })));
        assert!(matches!(dual_distance(&g, 0, 2), Err(Error::Disconnected { .. })));
        assert!(PathGraph::from_edges(2, &[(0, 1, 0.0)]).is_err());
    }

    fn bellman_ford_all_pairs(n: usize, edges: &[(usize, usize, f64)]) -> Vec<Vec<f64>> {
        let mut d = vec![vec![f64::INFINITY; n]; n];
        for (s, row) in d.iter_mut().enumerate() {
            row[s] = 0.0;
            for _ in 0..n {
                for &(u, v, l) in edges {
                    row[v] = row[v].min(row[u] + l);
                    row[u] = row[u].min(row[v] + l);
                }
            }
        }
        d
    }

    #[test]
    fn random_graph_matches_bellman_ford() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let n = 50;
        let mut edges: Vec<(usize, usize, f64)> = (1..n).map(|v| (rng.random_range(0..v), v, rng.random_range(0.1..2.0))).collect();
        for _ in 0..100 {
            edges.push((rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0.1..2.0)));
        }
        let edges: Vec<_> = edges.into_iter().filter(|e| e.0 != e.1).collect();
        let g = PathGraph::from_edges(n, &edges).unwrap();
        let oracle = bellman_ford_all_pairs(n, &edges);
        for x in 0..n {
            let sp = shortest_paths(&g, x).unwrap();
            for y in 0..n {
                assert!((sp.dist[y] - oracle[x][y]).abs() <= 1e-12 * oracle[x][y].max(1.0));
            }
            let phi = dual_potential(&g, x).unwrap();
            for y in 0..n {
                assert!((phi[y] - oracle[y][x]).abs() <= 1e-12 * oracle[y][x].max(1.0));
            }
        }
    }

    #[test]
    fn path_is_consistent_with_distance() {
        let mesh = build_torus_mesh(20, 20, 1.0, 1.0).unwrap();
        let w = sample_scalar(&mesh, |p| (2.0 * PI * p[0]).sin() * (2.0 * PI * p[1]).cos()).unwrap();
        let g = flat_graph(&mesh, &w, true);
        let r = distance_report(&g, 0, 213).unwrap();
        assert!(r.agrees());
        let len: f64 = r
            .path
            .windows(2)
            .map(|e| g.neighbors(e[0]).iter().find(|(v, _)| *v == e[1]).unwrap().1)
            .sum();
        assert!((len - r.primal).abs() < 1e-12);
        let mut csv = Vec::new();
        write_path_csv(&g, &r.path, &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), r.path.len() + 1);
    }

    #[test]
    fn comparison_bounds_examples() {
        let mesh = build_torus_mesh(24, 24, 1.0, 1.0).unwrap();
        let g = MetricField::flat(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pairs: Vec<(usize, usize)> = (0..1000).map(|_| (rng.random_range(0..12), rng.random_range(0..mesh.len()))).collect();
        let z = ScalarField::constant(mesh.clone(), 0.0).unwrap();
        let r = comparison_bounds_check(&g, &z, &pairs, true).unwrap();
        assert!(r.pass);
        assert!((r.min_lower_ratio - 1.0).abs() < 1e-12 && (r.max_upper_ratio - 1.0).abs() < 1e-12);
        let vals: Vec<f64> = (0..mesh.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = ScalarField::from_values(mesh.clone(), vals).unwrap();
        assert!(comparison_bounds_check(&g, &w, &pairs, true).unwrap().pass);
        let c = ScalarField::constant(mesh.clone(), -0.4).unwrap();
        let r = comparison_bounds_check(&g, &c, &pairs, false).unwrap();
        assert!(r.pass && (r.min_lower_ratio - 1.0).abs() < 1e-12 && (r.max_upper_ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn refinement_is_cauchy_for_smooth_weight() {
        let mut vals = Vec::new();
        for n in [32, 64, 128, 256] {
            let mesh = build_torus_mesh(n, n, 1.0, 1.0).unwrap();
            let w = sample_scalar(&mesh, |p| {
                let (dx, dy) = (p[0] - 0.5, p[1] - 0.5);
                0.5 * (-(dx * dx + dy * dy) / 0.02).exp()
            })
            .unwrap();
            let g = flat_graph(&mesh, &w, true);
            let x = mesh.node(n / 8, n / 2);
            let y = mesh.node(7 * n / 8, n / 2);
            vals.push(conformal_distance(&g, x, y).unwrap());
        }
        let gaps: Vec<f64> = vals.windows(2).map(|v| (v[0] - v[1]).abs()).collect();
        assert!(gaps[2] < gaps[0], "{vals:?}");
    }

    #[test]
    fn volume_growth_examples() {
        let v = volume_growth_condition(|_| 0.0, |_| 0.0, 100.0, 1000).unwrap();
        assert!(v.satisfied);
        assert!((v.end_f_over_r - 1.0).abs() < 1e-12);
        let v = volume_growth_condition(|r| r * r, |r| 1.0 + r.sin(), 100.0, 4000).unwrap();
        assert!(v.satisfied, "{v:?}");
        let v = volume_growth_condition(|r| r.exp(), |_| 0.0, 50.0, 1000).unwrap();
        assert!(!v.satisfied && v.condition_i && !v.condition_ii);
        let v = volume_growth_condition(|_| 0.0, |r| r, 20.0, 1000).unwrap();
        assert!(!v.condition_i);
        assert!(volume_growth_condition(|_| 0.0, |_| -1.0, 10.0, 100).is_err());
        assert!(matches!(volume_growth_condition(|_| 0.0, |r| 1e4 * r, 10.0, 100), Err(Error::Quadrature(_))));
    }

    fn torus_case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, usize, usize, usize)> {
        let n = 12 * 12;
        (
            prop::collection::vec(-1.0f64..1.0, n),
            prop::collection::vec(0.0f64..1.0, n),
            0..n,
            0..n,
            0..n,
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn metric_axioms_and_monotonicity((w, bump, a, b, c) in torus_case()) {
            let mesh = build_torus_mesh(12, 12, 1.0, 1.0).unwrap();
            let w1 = ScalarField::from_values(mesh.clone(), w.clone()).unwrap();
            let w2 = ScalarField::from_values(mesh.clone(), w.iter().zip(&bump).map(|(x, y)| x + y).collect()).unwrap();
            let g1 = flat_graph(&mesh, &w1, true);
            let g2 = flat_graph(&mesh, &w2, true);
            let (sa, sb) = (shortest_paths(&g1, a).unwrap(), shortest_paths(&g1, b).unwrap());
            prop_assert!((sa.dist[b] - sb.dist[a]).abs() <= 1e-12 * sa.dist[b].max(1e-300));
            prop_assert!(sa.dist[c] <= sa.dist[b] + sb.dist[c] + 1e-12);
            let s2 = shortest_paths(&g2, a).unwrap();
            for y in 0..mesh.len() {
                prop_assert!(sa.dist[y] <= s2.dist[y] * (1.0 + 1e-12));
            }
            let reports = distance_reports(&g1, &[(a, b), (c, b), (a, c)]).unwrap();
            prop_assert!(reports.iter().all(|r| r.agrees()));
        }
    }
}
