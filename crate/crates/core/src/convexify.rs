//! Convexifying weights for locally ℓ-convex domains.
//!
//! Given `Ω` (a node mask) the module computes the graph signed distance `V`,
//! the weight `w = φ(-ℓ'V)` for a fixed cutoff `φ`, the interior Laplacian
//! bound on `Lw`, and a sampled certificate that `d^w`-shortest paths between
//! points of `Ω` stay in `Ω`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dirichlet::Generator;
use crate::error::{Error, Result};
use crate::mesh::{Mesh, ScalarField};
use crate::metricgeom::{multi_source_distances, shortest_paths, shortest_paths_within, PathGraph, EXACT_SLACK};
use crate::timechange::DimensionBound;

/// Number of grid points used by the cutoff audit.
pub const CUTOFF_AUDIT_POINTS: usize = 1000;

/// Relative slack for the cutoff audit.
const AUDIT_SLACK: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct DomainMask {
    mesh: Arc<Mesh>,
    inside: Vec<bool>,
    band: f64,
    exact: Option<ScalarField>,
}

impl DomainMask {
    /// `band` is the half-width of the excluded boundary band; it must be at
    /// least one grid step so that it contains every sign change of `V`.
    pub fn new(mesh: Arc<Mesh>, inside: Vec<bool>, band: f64) -> Result<Self> {
        if inside.len() != mesh.len() {
            return Err(Error::MeshMismatch { expected: mesh.len(), found: inside.len() });
        }
        if !inside.iter().any(|&b| b) {
            return Err(Error::Domain("the domain has no inside nodes".into()));
        }
        if inside.iter().all(|&b| b) {
            return Err(Error::Domain("the domain has no outside nodes".into()));
        }
        let h = mesh.spacing().iter().cloned().fold(0.0, f64::max);
        if !(band >= h) || !band.is_finite() {
            return Err(Error::Domain(format!("boundary band {band} is narrower than the grid step {h}")));
        }
        Ok(Self { mesh, inside, band, exact: None })
    }

    /// Domain `{sd < 0}` that also keeps the sampled signed distance `sd`.
    ///
    /// Graph distances carry lattice jitter of order `h`, which the discrete
    /// Laplacian amplifies to order `1/h`; Laplacian checks therefore need a
    /// signed distance known in closed form.
    pub fn from_signed_distance(mesh: Arc<Mesh>, band: f64, sd: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let exact = crate::mesh::sample_scalar(&mesh, |x| sd(x))?;
        let inside = exact.values().iter().map(|&v| v < 0.0).collect();
        let mut mask = Self::new(mesh, inside, band)?;
        mask.exact = Some(exact);
        Ok(mask)
    }

    /// The closed-form signed distance, when the domain was built from one.
    pub fn exact_distance(&self) -> Option<&ScalarField> {
        self.exact.as_ref()
    }

    pub fn from_fn(mesh: Arc<Mesh>, band: f64, inside: impl Fn(&[f64]) -> bool) -> Result<Self> {
        let flags = (0..mesh.len()).map(|i| inside(&mesh.coordinates(i)[..mesh.dimension()])).collect();
        Self::new(mesh, flags, band)
    }

    /// The default band of four grid steps.
    pub fn default_band(mesh: &Mesh) -> f64 {
        4.0 * mesh.spacing().iter().cloned().fold(0.0, f64::max)
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn inside(&self) -> &[bool] {
        &self.inside
    }

    pub fn band(&self) -> f64 {
        self.band
    }

    pub fn inside_nodes(&self) -> Vec<usize> {
        (0..self.inside.len()).filter(|&i| self.inside[i]).collect()
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ConvexifyParams {
    pub lprime: f64,
    pub r0: f64,
    pub k: f64,
    pub n: DimensionBound,
}

impl ConvexifyParams {
    pub fn new(lprime: f64, r0: f64, k: f64, n: DimensionBound) -> Result<Self> {
        if !(lprime < 0.0) || !lprime.is_finite() {
            return Err(Error::InvalidArgument(format!("ℓ' must be negative, got {lprime}")));
        }
        if !(r0 > 0.0) || !r0.is_finite() {
            return Err(Error::InvalidArgument(format!("r0 must be positive, got {r0}")));
        }
        if !k.is_finite() {
            return Err(Error::InvalidArgument(format!("K must be finite, got {k}")));
        }
        match n {
            DimensionBound::Finite(v) if v > 1.0 => {}
            other => return Err(Error::DimensionRange(format!("N must be finite and > 1, got {other:?}"))),
        }
        Ok(Self { lprime, r0, k, n })
    }

    /// `-ℓ'(cot_{K,N}(r0/4) + 2/r0)`.
    pub fn laplacian_bound(&self) -> Result<f64> {
        Ok(-self.lprime * (cot_kn(self.k, self.n.value(), self.r0 / 4.0)? + 2.0 / self.r0))
    }

    pub fn cutoff(&self) -> Result<Cutoff> {
        Cutoff::new(self.lprime, self.r0)
    }
}

/// Signed graph distance: negative inside `Ω`, positive outside.
///
/// Both sides are reached by one multi-source sweep seeded at the endpoints of
/// every edge that crosses the boundary, each at half that edge's length. The
/// boundary is thus placed at edge midpoints and `V` is 1-Lipschitz along
/// every edge.
pub fn signed_distance(graph: &PathGraph, mask: &DomainMask) -> Result<ScalarField> {
    if graph.len() != mask.inside.len() {
        return Err(Error::MeshMismatch { expected: mask.inside.len(), found: graph.len() });
    }
    let mut seeds = Vec::new();
    for (u, v, len) in graph.edges() {
        if mask.inside[u] != mask.inside[v] {
            seeds.push((u, 0.5 * len));
            seeds.push((v, 0.5 * len));
        }
    }
    if seeds.is_empty() {
        return Err(Error::Domain("no graph edge crosses the domain boundary".into()));
    }
    let dist = multi_source_distances(graph, &seeds)?;
    let vals = dist
        .iter()
        .zip(&mask.inside)
        .enumerate()
        .map(|(i, (&d, &inside))| {
            if !d.is_finite() {
                return Err(Error::Disconnected { from: seeds[0].0, to: i });
            }
            Ok(if inside { -d } else { d })
        })
        .collect::<Result<Vec<_>>>()?;
    ScalarField::from_values(mask.mesh.clone(), vals)
}

/// The model-space comparison function `cot_{K,N}(x)`.
pub fn cot_kn(k: f64, n: f64, x: f64) -> Result<f64> {
    if !(n > 1.0) {
        return Err(Error::CotDomain(format!("N = {n} must exceed 1")));
    }
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::CotDomain(format!("x = {x} must be positive")));
    }
    let m = n - 1.0;
    if k > 0.0 {
        let a = (k / m).sqrt();
        if x * a >= std::f64::consts::PI {
            return Err(Error::CotDomain(format!(
                "x = {x} reaches the pole π√((N-1)/K) = {}",
                std::f64::consts::PI / a
            )));
        }
        Ok((k * m).sqrt() / (x * a).tan())
    } else if k == 0.0 {
        Ok(m / x)
    } else {
        let a = (-k / m).sqrt();
        Ok((-k * m).sqrt() / (x * a).tanh())
    }
}

/// Odd cutoff with `φ(t) = t` for `|t| ≤ s/4` and `φ = ±s/2` for `|t| ≥ 3s/4`,
/// where `s = -ℓ' r0`.
///
/// On each transition band `φ'` falls linearly from 1 to 0, so `φ` is
/// `C^{1,1}` with `|φ''| = 2/s` there. This is the unique profile meeting
/// `|φ''| ≤ 2/s`: the band has width `s/2` and `φ` must rise by exactly `s/4`.
/// At the four kinks `φ''` takes its one-sided value from the band interior.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Cutoff {
    s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CutoffAudit {
    pub points: usize,
    pub min_phi1: f64,
    pub max_phi1: f64,
    pub max_abs_phi2: f64,
    pub phi2_bound: f64,
    pub identity_error: f64,
    pub plateau_error: f64,
    pub continuity_error: f64,
    pub pass: bool,
}

impl Cutoff {
    pub fn new(lprime: f64, r0: f64) -> Result<Self> {
        let s = -lprime * r0;
        if !(lprime < 0.0) || !(r0 > 0.0) || !s.is_finite() || !(s > 0.0) {
            return Err(Error::Cutoff(format!("requires ℓ' < 0 and r0 > 0, got ℓ' = {lprime}, r0 = {r0}")));
        }
        let c = Self { s };
        let audit = c.audit(CUTOFF_AUDIT_POINTS);
        if !audit.pass {
            return Err(Error::Cutoff(format!("audit failed: {audit:?}")));
        }
        Ok(c)
    }

    /// Plateau height `s/2 = -½ℓ'r0`.
    pub fn plateau(&self) -> f64 {
        0.5 * self.s
    }

    fn knots(&self) -> (f64, f64) {
        (0.25 * self.s, 0.75 * self.s)
    }

    pub fn value(&self, t: f64) -> f64 {
        let (a, b) = self.knots();
        let x = t.abs();
        let v = if x <= a {
            x
        } else if x < b {
            x - (x - a) * (x - a) / self.s
        } else {
            self.plateau()
        };
        v.copysign(t)
    }

    pub fn d1(&self, t: f64) -> f64 {
        let (a, b) = self.knots();
        let x = t.abs();
        if x <= a {
            1.0
        } else if x < b {
            1.0 - 2.0 * (x - a) / self.s
        } else {
            0.0
        }
    }

    pub fn d2(&self, t: f64) -> f64 {
        let (a, b) = self.knots();
        let x = t.abs();
        if x < a || x > b {
            0.0
        } else {
            -(2.0 / self.s).copysign(t)
        }
    }

    /// Checks every stated constraint on a uniform grid over `[-s, s]`.
    pub fn audit(&self, points: usize) -> CutoffAudit {
        let (a, b) = self.knots();
        let bound = 2.0 / self.s;
        let slack = AUDIT_SLACK * self.s.max(1.0);
        let mut out = CutoffAudit {
            points,
            min_phi1: f64::INFINITY,
            max_phi1: f64::NEG_INFINITY,
            max_abs_phi2: 0.0,
            phi2_bound: bound,
            identity_error: 0.0,
            plateau_error: 0.0,
            continuity_error: 0.0,
            pass: false,
        };
        let step = 2.0 * self.s / (points.max(2) - 1) as f64;
        for i in 0..points.max(2) {
            let t = -self.s + i as f64 * step;
            let (p, p1, p2) = (self.value(t), self.d1(t), self.d2(t));
            out.min_phi1 = out.min_phi1.min(p1);
            out.max_phi1 = out.max_phi1.max(p1);
            out.max_abs_phi2 = out.max_abs_phi2.max(p2.abs());
            if t.abs() <= a {
                out.identity_error = out.identity_error.max((p - t).abs());
            }
            if t.abs() >= b {
                out.plateau_error = out.plateau_error.max((p - self.plateau().copysign(t)).abs());
            }
        }
        let e = 1e-9 * self.s;
        for knot in [-b, -a, a, b] {
            let jump = (self.value(knot + e) - self.value(knot - e)).abs() - 2.0 * e;
            let kink = (self.d1(knot + e) - self.d1(knot - e)).abs();
            out.continuity_error = out.continuity_error.max(jump).max(kink);
        }
        out.pass = out.min_phi1 >= -slack
            && out.max_phi1 <= 1.0 + slack
            && out.max_abs_phi2 <= bound * (1.0 + AUDIT_SLACK)
            && out.identity_error <= slack
            && out.plateau_error <= slack
            && out.continuity_error <= 1e-6;
        out
    }
}

/// `w = φ(-ℓ'V)`.
pub fn build_weight(v: &ScalarField, params: &ConvexifyParams) -> Result<ScalarField> {
    let phi = params.cutoff()?;
    v.map(|x| phi.value(-params.lprime * x))
}

/// Largest `|f(u) - f(v)| / len(u, v)` over graph edges.
pub fn edge_lipschitz(graph: &PathGraph, f: &[f64]) -> f64 {
    graph.edges().map(|(u, v, len)| (f[u] - f[v]).abs() / len).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Serialize)]
pub struct LaplacianReport {
    pub bound: f64,
    pub band: f64,
    pub nodes_checked: usize,
    pub min_defect: f64,
    pub argmin: Option<usize>,
    #[serde(skip)]
    pub defect: Vec<f64>,
    #[serde(skip)]
    pub eligible: Vec<bool>,
}

/// `bound - (Lw)_i` at nodes with `|V_i| > ε_bd`.
pub fn laplacian_bound_check(
    gen: &Generator,
    w: &ScalarField,
    v: &ScalarField,
    params: &ConvexifyParams,
    mask: &DomainMask,
) -> Result<LaplacianReport> {
    let n = gen.len();
    for len in [w.len(), v.len(), mask.inside.len()] {
        if len != n {
            return Err(Error::MeshMismatch { expected: n, found: len });
        }
    }
    let bound = params.laplacian_bound()?;
    let lw = gen.apply(w.values());
    let eligible: Vec<bool> = v.values().iter().map(|x| x.abs() > mask.band).collect();
    let defect: Vec<f64> = lw.iter().map(|l| bound - l).collect();
    let mut min_defect = f64::INFINITY;
    let mut argmin = None;
    for i in 0..n {
        if eligible[i] && defect[i] < min_defect {
            min_defect = defect[i];
            argmin = Some(i);
        }
    }
    Ok(LaplacianReport {
        bound,
        band: mask.band,
        nodes_checked: eligible.iter().filter(|&&b| b).count(),
        min_defect,
        argmin,
        defect,
        eligible,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PathViolation {
    pub source: usize,
    pub target: usize,
    /// `d^w` distance in the full graph.
    pub distance: f64,
    /// `d^w` distance through `{V ≤ ε_bd}` only; `None` if unreachable.
    pub restricted_distance: Option<f64>,
    /// Largest `V` on the unrestricted shortest path.
    pub max_intrusion: f64,
    pub path: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvexityReport {
    pub seed: u64,
    pub pairs: usize,
    pub sources: usize,
    pub band: f64,
    pub violations: usize,
    /// Largest relative excess of the restricted distance over the full one.
    pub max_excess: f64,
    pub max_intrusion: f64,
    pub examples: Vec<PathViolation>,
}

impl ConvexityReport {
    pub fn pass(&self) -> bool {
        self.violations == 0
    }
}

/// Number of worst violating paths kept in a report.
const KEPT_EXAMPLES: usize = 5;

/// Samples `pairs` pairs of inside nodes and checks that each pair is joined
/// by a `graph_w` shortest path inside `{V ≤ ε_bd}`.
///
/// Grid metrics are polygonal norms, so shortest paths are rarely unique and
/// the one returned by a tie-break says nothing about convexity. A pair is
/// therefore a violation only when the distance through the allowed region
/// exceeds the full distance, which means that every shortest path leaves it.
/// For each violation the reported path is a full-graph shortest path.
///
/// Pairs are drawn as `⌈√pairs⌉` random sources, each with random targets, so
/// that one pair of shortest-path trees serves several pairs. Sampling depends
/// only on the seed and the mask.
pub fn convexity_certificate(
    graph_w: &PathGraph,
    mask: &DomainMask,
    v: &ScalarField,
    pairs: usize,
    seed: u64,
) -> Result<ConvexityReport> {
    if graph_w.len() != mask.inside.len() || v.len() != mask.inside.len() {
        return Err(Error::MeshMismatch { expected: mask.inside.len(), found: graph_w.len() });
    }
    let band = mask.band;
    let vals = v.values();
    let allowed: Vec<bool> = vals.iter().map(|&x| x <= band).collect();
    let nodes = mask.inside_nodes();
    let n_sources = ((pairs as f64).sqrt().ceil() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plan: Vec<(usize, Vec<usize>)> = Vec::with_capacity(n_sources);
    for k in 0..n_sources {
        let count = pairs / n_sources + usize::from(k < pairs % n_sources);
        if count == 0 {
            break;
        }
        let s = nodes[rng.random_range(0..nodes.len())];
        let targets = (0..count).map(|_| nodes[rng.random_range(0..nodes.len())]).collect();
        plan.push((s, targets));
    }
    let per_source = plan
        .par_iter()
        .map(|(s, targets)| {
            let full = shortest_paths(graph_w, *s)?;
            let within = shortest_paths_within(graph_w, *s, &allowed)?;
            let mut found = Vec::new();
            let mut max_excess: f64 = 0.0;
            for &t in targets {
                let d = full.dist[t];
                let r = within.dist[t];
                let excess = if r.is_finite() { (r - d) / d.max(f64::MIN_POSITIVE) } else { f64::INFINITY };
                if excess.is_finite() {
                    max_excess = max_excess.max(excess);
                }
                if excess > EXACT_SLACK {
                    let path = full.path_to(t)?;
                    let intrusion = path.iter().map(|&u| vals[u]).fold(f64::NEG_INFINITY, f64::max);
                    found.push(PathViolation {
                        source: *s,
                        target: t,
                        distance: d,
                        restricted_distance: r.is_finite().then_some(r),
                        max_intrusion: intrusion,
                        path,
                    });
                }
            }
            Ok((found, max_excess))
        })
        .collect::<Result<Vec<_>>>()?;
    let max_excess = per_source.iter().map(|p| p.1).fold(0.0, f64::max);
    let mut all: Vec<PathViolation> = per_source.into_iter().flat_map(|p| p.0).collect();
    let violations = all.len();
    let max_intrusion = all.iter().map(|p| p.max_intrusion).fold(0.0, f64::max);
    all.sort_by(|a, b| b.max_intrusion.total_cmp(&a.max_intrusion).then((a.source, a.target).cmp(&(b.source, b.target))));
    all.truncate(KEPT_EXAMPLES);
    Ok(ConvexityReport { seed, pairs, sources: plan.len(), band, violations, max_excess, max_intrusion, examples: all })
}

#[derive(Debug, Clone, Serialize)]
pub struct MinkowskiReport {
    pub eps: Vec<f64>,
    /// `m(Z^ε) - m(Z)` per `ε`.
    pub excess: Vec<f64>,
    /// `(m(Z^ε) - m(Z)) / ε` per `ε`.
    pub quotients: Vec<f64>,
    /// Linear coefficient of the quadratic fit `c0 + c1 ε + c2 ε²`.
    pub content: f64,
}

/// Outer Minkowski content of the node set `z` in `graph` distance.
///
/// The offset `c0` absorbs the half-cell bias of node counting and `c2`
/// absorbs curvature, so `c1` estimates `m⁺(Z)`. With fewer than three radii
/// the plain quotient at the smallest radius is returned.
pub fn minkowski_content(graph: &PathGraph, z: &[bool], cell_measure: &[f64], eps: &[f64]) -> Result<MinkowskiReport> {
    let n = graph.len();
    if z.len() != n || cell_measure.len() != n {
        return Err(Error::MeshMismatch { expected: n, found: z.len().min(cell_measure.len()) });
    }
    if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidArgument("Minkowski radii must be positive".into()));
    }
    let seeds: Vec<(usize, f64)> = (0..n).filter(|&i| z[i]).map(|i| (i, 0.0)).collect();
    if seeds.is_empty() {
        return Err(Error::Domain("Minkowski content of an empty set".into()));
    }
    let dist = multi_source_distances(graph, &seeds)?;
    let excess: Vec<f64> = eps
        .iter()
        .map(|&e| (0..n).filter(|&i| !z[i] && dist[i] <= e).map(|i| cell_measure[i]).sum())
        .collect();
    let quotients: Vec<f64> = excess.iter().zip(eps).map(|(a, e)| a / e).collect();
    let content = if eps.len() >= 3 {
        quadratic_fit(eps, &excess)?[1]
    } else {
        quotients[0]
    };
    Ok(MinkowskiReport { eps: eps.to_vec(), excess, quotients, content })
}

fn quadratic_fit(x: &[f64], y: &[f64]) -> Result<[f64; 3]> {
    let mut a = faer::Mat::<f64>::zeros(x.len(), 3);
    let mut b = faer::Mat::<f64>::zeros(x.len(), 1);
    for (i, (&xi, &yi)) in x.iter().zip(y).enumerate() {
        a[(i, 0)] = 1.0;
        a[(i, 1)] = xi;
        a[(i, 2)] = xi * xi;
        b[(i, 0)] = yi;
    }
    let ata = a.transpose() * &a;
    let atb = a.transpose() * &b;
    let lu = ata.partial_piv_lu();
    use faer::linalg::solvers::Solve;
    let c = lu.solve(&atb);
    let out = [c[(0, 0)], c[(1, 0)], c[(2, 0)]];
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Quadrature("degenerate Minkowski fit; use distinct radii".into()));
    }
    Ok(out)
}
