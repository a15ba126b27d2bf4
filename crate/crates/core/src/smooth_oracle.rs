//! Finite-difference differential geometry of sampled metrics.
//!
//! Everything here is computed from fourth-order central differences of the
//! metric components and of scalar fields; the discrete Dirichlet form in
//! [`crate::dirichlet`] is not used. Nested stencils reach four layers out,
//! so nodes near a chart seam (see [`Mesh::seam_interior`]) are excluded
//! from verdicts.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat2};
use crate::mesh::{Mesh, MetricField, ScalarField};
use crate::timechange::{coefficient, DimensionBound};

/// Seam margin for curvature quantities: Ricci differentiates Christoffel
/// symbols, and both use the two-layer fourth-order stencil.
pub const CURVATURE_MARGIN: usize = 4;

/// Seam margin for the Bochner check (nested second derivatives of `f`).
pub const BOCHNER_MARGIN: usize = 4;

/// `Γ^k_ij` stored as `[k][i][j]`.
pub type Christoffel = [[[f64; 2]; 2]; 2];

fn check_mesh(a: &Arc<Mesh>, b: &Arc<Mesh>) -> Result<()> {
    if Arc::ptr_eq(a, b) || a == b {
        Ok(())
    } else {
        Err(Error::MeshMismatch { expected: a.len(), found: b.len() })
    }
}

fn metric_inverse(metric: &MetricField, node: usize) -> Result<Mat2> {
    linalg::inverse(metric.at(node), metric.mesh().dimension()).ok_or(Error::SingularMetric { node })
}

/// Fourth-order central first difference along `axis` of a per-node
/// quantity; `lincomb` forms `Σ s_k (a_k - b_k)` from `(a_k, b_k, s_k)`
/// so that constants difference to exactly zero.
fn d1<T: Copy>(mesh: &Mesh, node: usize, axis: usize, at: impl Fn(usize) -> T, lincomb: impl Fn(&[(T, T, f64)]) -> T) -> T {
    let c = 1.0 / (12.0 * mesh.spacing()[axis]);
    let f = |s: isize| at(mesh.step(node, axis, s));
    lincomb(&[(f(1), f(-1), 8.0 * c), (f(2), f(-2), -c)])
}

fn lincomb_scalar(terms: &[(f64, f64, f64)]) -> f64 {
    terms.iter().map(|(a, b, s)| s * (a - b)).sum()
}

fn lincomb_mat(terms: &[(Mat2, Mat2, f64)]) -> Mat2 {
    terms.iter().fold(linalg::ZERO, |acc, (a, b, s)| linalg::add(&acc, &linalg::scale(&linalg::sub(a, b), *s)))
}

fn lincomb_christoffel(terms: &[(Christoffel, Christoffel, f64)]) -> Christoffel {
    let mut out = [[[0.0; 2]; 2]; 2];
    for (a, b, s) in terms {
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    out[k][i][j] += s * (a[k][i][j] - b[k][i][j]);
                }
            }
        }
    }
    out
}

fn scalar_gradient(mesh: &Mesh, u: &[f64], node: usize) -> [f64; 2] {
    let mut g = [0.0; 2];
    for (axis, slot) in g.iter_mut().enumerate().take(mesh.dimension()) {
        *slot = d1(mesh, node, axis, |k| u[k], lincomb_scalar);
    }
    g
}

/// Coordinate second derivatives `∂_i∂_j u`, fourth order.
fn scalar_second(mesh: &Mesh, u: &[f64], node: usize) -> Mat2 {
    let dim = mesh.dimension();
    let h = mesh.spacing();
    let mut d = linalg::ZERO;
    for axis in 0..dim {
        let f = |s: isize| u[mesh.step(node, axis, s)];
        let (c0, c1, c2) = (f(0), f(1) + f(-1), f(2) + f(-2));
        d[axis][axis] = (16.0 * (c1 - 2.0 * c0) - (c2 - 2.0 * c0)) / (12.0 * h[axis] * h[axis]);
    }
    if dim == 2 {
        // tensor product of the first-difference stencils
        let dy = |sx: isize| {
            let at = |sy: isize| u[mesh.offset(node, sx, sy)];
            8.0 * (at(1) - at(-1)) - (at(2) - at(-2))
        };
        let v = (8.0 * (dy(1) - dy(-1)) - (dy(2) - dy(-2))) / (144.0 * h[0] * h[1]);
        d[0][1] = v;
        d[1][0] = v;
    }
    d
}

pub fn christoffel(metric: &MetricField, node: usize) -> Result<Christoffel> {
    let mesh = metric.mesh();
    let dim = mesh.dimension();
    let ginv = metric_inverse(metric, node)?;
    // dg[l][i][j] = ∂_l g_ij
    let mut dg = [linalg::ZERO; 2];
    for (l, slot) in dg.iter_mut().enumerate().take(dim) {
        *slot = d1(mesh, node, l, |k| *metric.at(k), lincomb_mat);
    }
    let mut c = [[[0.0; 2]; 2]; 2];
    for k in 0..dim {
        for i in 0..dim {
            for j in 0..dim {
                let mut s = 0.0;
                for l in 0..dim {
                    s += ginv[k][l] * (dg[i][j][l] + dg[j][i][l] - dg[l][i][j]);
                }
                c[k][i][j] = 0.5 * s;
            }
        }
    }
    Ok(c)
}

/// Ricci tensor together with the antisymmetric part discarded by
/// symmetrization.
#[derive(Debug, Clone, Copy)]
pub struct RicciSample {
    pub value: Mat2,
    pub asymmetry: f64,
}

fn ricci_from(mesh: &Mesh, node: usize, chr: &dyn Fn(usize) -> Christoffel) -> RicciSample {
    let dim = mesh.dimension();
    if dim == 1 {
        return RicciSample { value: linalg::ZERO, asymmetry: 0.0 };
    }
    let c = chr(node);
    // dc[l][k][i][j] = ∂_l Γ^k_ij
    let mut dc = [[[[0.0; 2]; 2]; 2]; 2];
    for (l, slot) in dc.iter_mut().enumerate() {
        *slot = d1(mesh, node, l, chr, lincomb_christoffel);
    }
    let mut r = linalg::ZERO;
    for i in 0..2 {
        for j in 0..2 {
            let mut s = 0.0;
            for k in 0..2 {
                s += dc[k][k][i][j] - dc[j][k][i][k];
                for l in 0..2 {
                    s += c[k][k][l] * c[l][i][j] - c[k][j][l] * c[l][i][k];
                }
            }
            r[i][j] = s;
        }
    }
    RicciSample { value: linalg::symmetrize(&r), asymmetry: (r[0][1] - r[1][0]).abs() }
}

pub fn ricci(metric: &MetricField, node: usize) -> Result<RicciSample> {
    let mesh = metric.mesh();
    let mut cache = Vec::new();
    if mesh.dimension() == 2 {
        for l in 0..2 {
            for s in [2, 1, -1, -2] {
                let k = mesh.step(node, l, s);
                cache.push((k, christoffel(metric, k)?));
            }
        }
        cache.push((node, christoffel(metric, node)?));
    }
    let lookup = |k: usize| cache.iter().find(|(n, _)| *n == k).map(|(_, c)| *c).unwrap_or_default();
    Ok(ricci_from(mesh, node, &lookup))
}

/// Weighted Hessian `∂_i∂_j V - Γ^k_ij ∂_k V`.
fn hessian_at(mesh: &Mesh, c: &Christoffel, u: &[f64], node: usize) -> Mat2 {
    let dim = mesh.dimension();
    let grad = scalar_gradient(mesh, u, node);
    let mut h = scalar_second(mesh, u, node);
    for i in 0..dim {
        for j in 0..dim {
            for (k, gk) in grad.iter().enumerate().take(dim) {
                h[i][j] -= c[k][i][j] * gk;
            }
        }
    }
    h
}

fn is_constant(v: &[f64]) -> bool {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hi - lo <= 1e-12 * (1.0 + lo.abs().max(hi.abs()))
}

fn check_dimension(mesh: &Mesh, v: &ScalarField, n_bound: DimensionBound) -> Result<()> {
    let n = mesh.dimension() as f64;
    if n_bound.is_finite() && n_bound.value() < n {
        return Err(Error::DimensionRange(format!("N = {n_bound} is below the manifold dimension {n}")));
    }
    if n_bound.is_finite() && n_bound.value() == n && !is_constant(v.values()) {
        return Err(Error::DimensionRange(format!(
            "N equals the manifold dimension {n} but the potential is not constant"
        )));
    }
    Ok(())
}

/// Per-node pieces of the Bakry–Émery tensor that do not depend on `N`.
#[derive(Debug, Clone)]
pub struct TensorParts {
    mesh: Arc<Mesh>,
    metric: Vec<Mat2>,
    ricci: Vec<Mat2>,
    hess_v: Vec<Mat2>,
    grad_v: Vec<[f64; 2]>,
    constant_v: bool,
    max_asymmetry: f64,
}

impl TensorParts {
    pub fn new(metric: &MetricField, v: &ScalarField) -> Result<Self> {
        let mesh = metric.mesh().clone();
        check_mesh(&mesh, v.mesh())?;
        let n = mesh.len();
        let chr: Vec<Christoffel> = (0..n).into_par_iter().map(|k| christoffel(metric, k)).collect::<Result<_>>()?;
        let per_node: Vec<(RicciSample, Mat2, [f64; 2])> = (0..n)
            .into_par_iter()
            .map(|node| {
                let ric = ricci_from(&mesh, node, &|k| chr[k]);
                let hv = hessian_at(&mesh, &chr[node], v.values(), node);
                let gv = scalar_gradient(&mesh, v.values(), node);
                (ric, hv, gv)
            })
            .collect();
        let max_asymmetry = per_node.iter().map(|p| p.0.asymmetry).fold(0.0, f64::max);
        Ok(Self {
            metric: metric.values().to_vec(),
            ricci: per_node.iter().map(|p| p.0.value).collect(),
            hess_v: per_node.iter().map(|p| p.1).collect(),
            grad_v: per_node.iter().map(|p| p.2).collect(),
            constant_v: is_constant(v.values()),
            max_asymmetry,
            mesh,
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn max_ricci_asymmetry(&self) -> f64 {
        self.max_asymmetry
    }

    pub fn ricci(&self, node: usize) -> Mat2 {
        self.ricci[node]
    }

    fn check(&self, n_bound: DimensionBound) -> Result<()> {
        let n = self.mesh.dimension() as f64;
        if n_bound.is_finite() && n_bound.value() < n {
            return Err(Error::DimensionRange(format!("N = {n_bound} is below the manifold dimension {n}")));
        }
        if n_bound.is_finite() && n_bound.value() == n && !self.constant_v {
            return Err(Error::DimensionRange(format!(
                "N equals the manifold dimension {n} but the potential is not constant"
            )));
        }
        Ok(())
    }

    /// `Ric + Hess V - dV⊗dV/(N-n)` at one node.
    pub fn tensor(&self, node: usize, n_bound: DimensionBound) -> Result<Mat2> {
        self.check(n_bound)?;
        Ok(self.tensor_unchecked(node, n_bound.excess_reciprocal(self.mesh.dimension() as f64)))
    }

    fn tensor_unchecked(&self, node: usize, excess: f64) -> Mat2 {
        let g = self.grad_v[node];
        let mut t = linalg::add(&self.ricci[node], &self.hess_v[node]);
        let dim = self.mesh.dimension();
        for i in 0..dim {
            for j in 0..dim {
                t[i][j] -= excess * g[i] * g[j];
            }
        }
        linalg::symmetrize(&t)
    }

    /// Per-node minimum eigenvalue of the tensor relative to `g`.
    pub fn optimal_k(&self, n_bound: DimensionBound) -> Result<Vec<f64>> {
        self.check(n_bound)?;
        let dim = self.mesh.dimension();
        let excess = n_bound.excess_reciprocal(dim as f64);
        (0..self.mesh.len())
            .into_par_iter()
            .map(|node| {
                let t = self.tensor_unchecked(node, excess);
                linalg::min_generalized_eigenvalue(&t, &self.metric[node], dim)
                    .ok_or(Error::SingularMetric { node })
            })
            .collect()
    }
}

/// Symmetric Ricci tensor at every node.
pub fn ricci_field(metric: &MetricField) -> Result<Vec<RicciSample>> {
    let mesh = metric.mesh();
    let chr: Vec<Christoffel> = (0..mesh.len()).into_par_iter().map(|k| christoffel(metric, k)).collect::<Result<_>>()?;
    Ok((0..mesh.len()).into_par_iter().map(|node| ricci_from(mesh, node, &|k| chr[k])).collect())
}

pub fn bakry_emery_tensor(metric: &MetricField, v: &ScalarField, n_bound: DimensionBound, node: usize) -> Result<Mat2> {
    let mesh = metric.mesh();
    check_mesh(mesh, v.mesh())?;
    check_dimension(mesh, v, n_bound)?;
    let ric = ricci(metric, node)?.value;
    let c = christoffel(metric, node)?;
    let hv = hessian_at(mesh, &c, v.values(), node);
    let g = scalar_gradient(mesh, v.values(), node);
    let excess = n_bound.excess_reciprocal(mesh.dimension() as f64);
    let mut t = linalg::add(&ric, &hv);
    for i in 0..mesh.dimension() {
        for j in 0..mesh.dimension() {
            t[i][j] -= excess * g[i] * g[j];
        }
    }
    Ok(linalg::symmetrize(&t))
}

pub fn optimal_k(metric: &MetricField, v: &ScalarField, n_bound: DimensionBound) -> Result<ScalarField> {
    let parts = TensorParts::new(metric, v)?;
    ScalarField::from_values(metric.mesh().clone(), parts.optimal_k(n_bound)?)
}

/// `(e^{2w} g, V₀ + (n-2) w)`: the smooth data whose weighted volume is
/// `e^{2w} e^{-V₀} vol_g`.
pub fn conformal_data(metric: &MetricField, v0: &ScalarField, w: &ScalarField) -> Result<(MetricField, ScalarField)> {
    check_mesh(metric.mesh(), v0.mesh())?;
    check_mesh(metric.mesh(), w.mesh())?;
    let n = metric.mesh().dimension() as f64;
    let g = metric.conformal(w)?;
    let v = ScalarField::from_values(
        metric.mesh().clone(),
        v0.values().iter().zip(w.values()).map(|(a, b)| a + (n - 2.0) * b).collect(),
    )?;
    Ok((g, v))
}

/// `|∇u|²_g` by fourth-order central differences.
pub fn gradient_norm_sq(metric: &MetricField, u: &ScalarField) -> Result<ScalarField> {
    let mesh = metric.mesh();
    check_mesh(mesh, u.mesh())?;
    let dim = mesh.dimension();
    let vals = (0..mesh.len())
        .map(|node| {
            let ginv = metric_inverse(metric, node)?;
            let d = scalar_gradient(mesh, u.values(), node);
            Ok(linalg::quad_form(&ginv, &d, &d, dim))
        })
        .collect::<Result<Vec<_>>>()?;
    ScalarField::from_values(mesh.clone(), vals)
}

fn weighted_laplacian_at(mesh: &Mesh, ginv: &Mat2, c: &Christoffel, v: &[f64], u: &[f64], node: usize) -> f64 {
    let dim = mesh.dimension();
    let h = hessian_at(mesh, c, u, node);
    let du = scalar_gradient(mesh, u, node);
    let dv = scalar_gradient(mesh, v, node);
    let mut s = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            s += ginv[i][j] * (h[i][j] - dv[i] * du[j]);
        }
    }
    s
}

/// `Δ_g u - ⟨∇V, ∇u⟩_g` by fourth-order central differences.
pub fn weighted_laplacian(metric: &MetricField, v: &ScalarField, u: &ScalarField) -> Result<ScalarField> {
    let mesh = metric.mesh();
    check_mesh(mesh, v.mesh())?;
    check_mesh(mesh, u.mesh())?;
    let vals = (0..mesh.len())
        .into_par_iter()
        .map(|node| {
            let ginv = metric_inverse(metric, node)?;
            let c = christoffel(metric, node)?;
            Ok(weighted_laplacian_at(mesh, &ginv, &c, v.values(), u.values(), node))
        })
        .collect::<Result<Vec<_>>>()?;
    ScalarField::from_values(mesh.clone(), vals)
}

/// Pointwise defect of the dimension-improved Bochner inequality.
#[derive(Debug, Clone)]
pub struct BochnerReport {
    pub defect: ScalarField,
    /// Scale `Γ₂ + |H_f|²` used for relative tolerances.
    pub scale: ScalarField,
    pub interior: Vec<bool>,
    pub min_defect: f64,
}

/// `Γ₂(f) - [k Γ(f) + |H_f|² + (tr H_f - L f)²/(N-n)]` with `k` from
/// [`optimal_k`] and `L = Δ_g - ∇V·∇`.
pub fn improved_bochner_check(metric: &MetricField, v: &ScalarField, n_bound: DimensionBound, f: &ScalarField) -> Result<BochnerReport> {
    let mesh = metric.mesh().clone();
    check_mesh(&mesh, f.mesh())?;
    let parts = TensorParts::new(metric, v)?;
    let k = parts.optimal_k(n_bound)?;
    let dim = mesh.dimension();
    let n = mesh.len();
    let excess = n_bound.excess_reciprocal(dim as f64);
    let ginv: Vec<Mat2> = (0..n).map(|node| metric_inverse(metric, node)).collect::<Result<_>>()?;
    let chr: Vec<Christoffel> = (0..n).into_par_iter().map(|k| christoffel(metric, k)).collect::<Result<_>>()?;
    let fv = f.values();
    let vv = v.values();
    let gamma: Vec<f64> = (0..n)
        .map(|node| {
            let d = scalar_gradient(&mesh, fv, node);
            linalg::quad_form(&ginv[node], &d, &d, dim)
        })
        .collect();
    let lf: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|node| weighted_laplacian_at(&mesh, &ginv[node], &chr[node], vv, fv, node))
        .collect();
    let rows: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|node| {
            let gi = &ginv[node];
            let l_gamma = weighted_laplacian_at(&mesh, gi, &chr[node], vv, &gamma, node);
            let df = scalar_gradient(&mesh, fv, node);
            let dlf = scalar_gradient(&mesh, &lf, node);
            let gamma2 = 0.5 * l_gamma - linalg::quad_form(gi, &df, &dlf, dim);
            let h = hessian_at(&mesh, &chr[node], fv, node);
            // |H|² = tr(g⁻¹ H g⁻¹ H)
            let mut hs = 0.0;
            for i in 0..dim {
                for j in 0..dim {
                    for a in 0..dim {
                        for b in 0..dim {
                            hs += gi[i][a] * gi[j][b] * h[i][j] * h[a][b];
                        }
                    }
                }
            }
            let tr = linalg::trace(&linalg_mul(gi, &h), dim);
            let drift = tr - lf[node];
            let rhs = k[node] * gamma[node] + hs + excess * drift * drift;
            (gamma2 - rhs, gamma2.abs() + hs)
        })
        .collect();
    let interior = mesh.seam_interior(BOCHNER_MARGIN);
    let min_defect = rows
        .iter()
        .zip(&interior)
        .filter(|(_, &ok)| ok)
        .map(|(r, _)| r.0)
        .fold(f64::INFINITY, f64::min);
    Ok(BochnerReport {
        defect: ScalarField::from_values(mesh.clone(), rows.iter().map(|r| r.0).collect())?,
        scale: ScalarField::from_values(mesh.clone(), rows.iter().map(|r| r.1).collect())?,
        interior,
        min_defect,
    })
}

fn linalg_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut m = linalg::ZERO;
    for i in 0..2 {
        for j in 0..2 {
            m[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    m
}

/// `e^{-2w} [k - c(N,N') |∇w|² - Δ_ac w]`.
pub fn predicted_kprime(
    k: &ScalarField,
    n_bound: DimensionBound,
    nprime: DimensionBound,
    w: &ScalarField,
    grad_w_sq: &ScalarField,
    lap_w: &ScalarField,
) -> Result<ScalarField> {
    let c = coefficient(n_bound, nprime)?;
    for f in [w, grad_w_sq, lap_w] {
        check_mesh(k.mesh(), f.mesh())?;
    }
    if let Some((node, &value)) = grad_w_sq.values().iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(Error::Domain(format!("|∇w|² = {value} is negative at node {node}")));
    }
    let vals = (0..k.len())
        .map(|i| (-2.0 * w.values()[i]).exp() * (k.values()[i] - c * grad_w_sq.values()[i] - lap_w.values()[i]))
        .collect();
    ScalarField::from_values(k.mesh().clone(), vals)
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvatureSummary {
    pub n: DimensionBound,
    pub nprime: DimensionBound,
    pub nodes_checked: usize,
    pub min_defect: f64,
    pub argmin: usize,
    pub tolerance: f64,
    pub max_ricci_asymmetry: f64,
    pub pass: bool,
}

/// Predicted and oracle curvature bounds of a time-changed space.
#[derive(Debug, Clone)]
pub struct CurvatureReport {
    pub mesh: Arc<Mesh>,
    pub predicted: Vec<f64>,
    pub oracle: Vec<f64>,
    pub defect: Vec<f64>,
    pub interior: Vec<bool>,
    pub summary: CurvatureSummary,
}

impl CurvatureReport {
    pub fn pass(&self) -> bool {
        self.summary.pass
    }

    pub fn min_defect(&self) -> f64 {
        self.summary.min_defect
    }

    /// Smallest predicted bound over the checked nodes; a constant lower
    /// curvature bound for the transformed space.
    pub fn min_predicted(&self) -> f64 {
        self.predicted
            .iter()
            .zip(&self.interior)
            .filter(|(_, &ok)| ok)
            .map(|(p, _)| *p)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "node,kprime_pred,k_oracle,defect,checked")?;
        for i in 0..self.defect.len() {
            writeln!(
                out,
                "{i},{},{},{},{}",
                self.predicted[i], self.oracle[i], self.defect[i], self.interior[i] as u8
            )?;
        }
        Ok(())
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary)?)
    }
}

/// Compares the predicted transformed bound against the oracle bound of
/// the conformal data for each `N'` in `nprimes`, sharing the base-space
/// computations.
pub fn verify_theorem_b_multi(
    metric: &MetricField,
    v0: &ScalarField,
    n_bound: DimensionBound,
    w: &ScalarField,
    nprimes: &[DimensionBound],
    tol: f64,
) -> Result<Vec<CurvatureReport>> {
    let mesh = metric.mesh().clone();
    for nprime in nprimes {
        coefficient(n_bound, *nprime)?;
    }
    let base = TensorParts::new(metric, v0)?;
    let k = ScalarField::from_values(mesh.clone(), base.optimal_k(n_bound)?)?;
    let gws = gradient_norm_sq(metric, w)?;
    let lap = weighted_laplacian(metric, v0, w)?;
    let (g2, v2) = conformal_data(metric, v0, w)?;
    let transformed = TensorParts::new(&g2, &v2)?;
    let interior = mesh.seam_interior(CURVATURE_MARGIN);
    let mut reports = Vec::with_capacity(nprimes.len());
    for &nprime in nprimes {
        let predicted = predicted_kprime(&k, n_bound, nprime, w, &gws, &lap)?.into_values();
        let oracle = transformed.optimal_k(nprime)?;
        let defect: Vec<f64> = oracle.iter().zip(&predicted).map(|(o, p)| o - p).collect();
        let (argmin, min_defect) = defect
            .iter()
            .zip(&interior)
            .enumerate()
            .filter(|(_, (_, &ok))| ok)
            .map(|(i, (d, _))| (i, *d))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        let summary = CurvatureSummary {
            n: n_bound,
            nprime,
            nodes_checked: interior.iter().filter(|&&b| b).count(),
            min_defect,
            argmin,
            tolerance: tol,
            max_ricci_asymmetry: transformed.max_ricci_asymmetry(),
            pass: min_defect >= -tol,
        };
        reports.push(CurvatureReport { mesh: mesh.clone(), predicted, oracle, defect, interior: interior.clone(), summary });
    }
    Ok(reports)
}

#[allow(non_snake_case)]
pub fn verify_theorem_B(
    metric: &MetricField,
    v0: &ScalarField,
    n_bound: DimensionBound,
    w: &ScalarField,
    nprime: DimensionBound,
    tol: f64,
) -> Result<CurvatureReport> {
    Ok(verify_theorem_b_multi(metric, v0, n_bound, w, &[nprime], tol)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_chart_mesh, build_circle_mesh, build_torus_mesh, sample_metric, sample_scalar};
    use crate::timechange::DimensionBound::{Finite, Infinite};
    use std::f64::consts::PI;

    fn sphere_band(n_theta: usize, n_phi: usize) -> MetricField {
        let h = 2.0 * PI / n_phi as f64;
        let mesh = build_chart_mesh([n_theta, n_phi], [n_theta as f64 * h, 2.0 * PI], [PI / 4.0, 0.0], [false, true]).unwrap();
        sample_metric(&mesh, |x| linalg::diag(1.0, x[0].sin().powi(2))).unwrap()
    }

    fn slope(errs: &[f64]) -> f64 {
        (errs[errs.len() - 2] / errs[errs.len() - 1]).log2()
    }

    fn zero(mesh: &Arc<Mesh>) -> ScalarField {
        ScalarField::constant(mesh.clone(), 0.0).unwrap()
    }

    #[test]
    fn flat_metric_has_zero_christoffels_and_ricci() {
        let mesh = build_torus_mesh(16, 16, 1.0, 1.0).unwrap();
        let g = MetricField::flat(&mesh);
        for node in [0, 17, 255] {
            assert_eq!(christoffel(&g, node).unwrap(), [[[0.0; 2]; 2]; 2]);
            let r = ricci(&g, node).unwrap();
            assert_eq!(r.value, linalg::ZERO);
        }
    }

    #[test]
    fn sphere_christoffel_converges() {
        let mut errs = Vec::new();
        for (nt, np) in [(16, 64), (32, 128), (64, 256)] {
            let g = sphere_band(nt, np);
            let mesh = g.mesh().clone();
            let node = mesh.node(nt / 2 - 3, 5);
            let theta = mesh.coordinates(node)[0];
            let c = christoffel(&g, node).unwrap();
            let exact = -theta.sin() * theta.cos();
            let exact_b = theta.cos() / theta.sin();
            errs.push((c[0][1][1] - exact).abs().max((c[1][0][1] - exact_b).abs()));
            assert_eq!(c[1][0][1], c[1][1][0]);
        }
        assert!(slope(&errs) >= 1.9, "{errs:?}");
    }

    #[test]
    fn conformal_christoffel_converges() {
        let mut errs = Vec::new();
        for n in [32, 64, 128] {
            let mesh = build_torus_mesh(n, n, 2.0 * PI, 2.0 * PI).unwrap();
            let w = |x: f64, y: f64| 0.2 * x.sin() * y.cos();
            let g = sample_metric(&mesh, |p| linalg::scale(&linalg::identity(2), (2.0 * w(p[0], p[1])).exp())).unwrap();
            let node = mesh.node(n / 3, n / 5);
            let [x, y] = mesh.coordinates(node);
            let dw = [0.2 * x.cos() * y.cos(), -0.2 * x.sin() * y.sin()];
            let c = christoffel(&g, node).unwrap();
            let mut err = 0.0f64;
            for k in 0..2 {
                for i in 0..2 {
                    for j in 0..2 {
                        let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
                        let exact = d(i, k) * dw[j] + d(j, k) * dw[i] - d(i, j) * dw[k];
                        err = err.max((c[k][i][j] - exact).abs());
                    }
                }
            }
            errs.push(err);
        }
        assert!(slope(&errs) >= 1.9, "{errs:?}");
    }

    #[test]
    fn sphere_ricci_equals_metric() {
        let mut errs = Vec::new();
        for (nt, np) in [(16, 64), (32, 128), (64, 256)] {
            let g = sphere_band(nt, np);
            let mesh = g.mesh().clone();
            let mut err = 0.0f64;
            // a fixed latitude window so the compared node sets coincide
            let window = |k: usize| (mesh.coordinates(k)[0] - PI / 2.0).abs() <= PI / 6.0 + 1e-12;
            for node in (0..mesh.len()).filter(|&k| window(k)) {
                let r = ricci(&g, node).unwrap();
                let gi = g.at(node);
                for i in 0..2 {
                    for j in 0..2 {
                        err = err.max((r.value[i][j] - gi[i][j]).abs());
                    }
                }
            }
            errs.push(err);
        }
        assert!(slope(&errs) >= 1.9, "{errs:?}");
    }

    #[test]
    fn conformal_ricci_matches_gauss_curvature() {
        let mut errs = Vec::new();
        for n in [32, 64, 128] {
            let mesh = build_torus_mesh(n, n, 2.0 * PI, 2.0 * PI).unwrap();
            let g = sample_metric(&mesh, |p| linalg::scale(&linalg::identity(2), (0.2 * p[0].sin() * p[1].cos() * 2.0).exp())).unwrap();
            let fields = ricci_field(&g).unwrap();
            let mut err = 0.0f64;
            for (node, r) in fields.iter().enumerate() {
                let [x, y] = mesh.coordinates(node);
                let lap_w = -0.4 * x.sin() * y.cos();
                err = err.max((r.value[0][0] + lap_w).abs()).max((r.value[1][1] + lap_w).abs()).max(r.value[0][1].abs());
            }
            errs.push(err);
        }
        assert!(slope(&errs) >= 1.9, "{errs:?}");
    }

    #[test]
    fn tensor_branches() {
        let mesh = build_torus_mesh(16, 16, 2.0 * PI, 2.0 * PI).unwrap();
        let g = MetricField::flat(&mesh);
        assert_eq!(bakry_emery_tensor(&g, &zero(&mesh), Infinite, 5).unwrap(), linalg::ZERO);
        assert_eq!(bakry_emery_tensor(&g, &zero(&mesh), Finite(2.0), 5).unwrap(), linalg::ZERO);
        let v = sample_scalar(&mesh, |p| p[0].cos()).unwrap();
        assert!(matches!(bakry_emery_tensor(&g, &v, Finite(2.0), 5), Err(Error::DimensionRange(_))));
        assert!(matches!(bakry_emery_tensor(&g, &v, Finite(1.5), 5), Err(Error::DimensionRange(_))));

        let sphere = sphere_band(32, 128);
        let z = zero(sphere.mesh());
        let node = sphere.mesh().node(16, 3);
        assert_eq!(bakry_emery_tensor(&sphere, &z, Finite(2.0), node).unwrap(), ricci(&sphere, node).unwrap().value);
    }

    #[test]
    fn one_dimensional_tensor_is_hessian_of_potential() {
        let eps = 0.1;
        let mut errs = Vec::new();
        for n in [64, 128, 256] {
            let mesh = build_circle_mesh(n, 2.0 * PI).unwrap();
            let g = MetricField::flat(&mesh);
            let v = sample_scalar(&mesh, |x| -eps * x[0].cos()).unwrap();
            let err = (0..n)
                .map(|node| {
                    let t = bakry_emery_tensor(&g, &v, Infinite, node).unwrap();
                    (t[0][0] - eps * mesh.coordinates(node)[0].cos()).abs()
                })
                .fold(0.0, f64::max);
            errs.push(err);
        }
        assert!(slope(&errs) >= 1.9);
    }

    #[test]
    fn optimal_k_examples() {
        let mesh = build_torus_mesh(32, 32, 2.0 * PI, 2.0 * PI).unwrap();
        let g = MetricField::flat(&mesh);
        for nb in [Finite(2.0), Finite(5.0), Infinite] {
            assert!(optimal_k(&g, &zero(&mesh), nb).unwrap().values().iter().all(|&k| k == 0.0));
        }

        let mut errs = Vec::new();
        for n in [32, 64, 128] {
            let mesh = build_torus_mesh(n, n, 2.0 * PI, 2.0 * PI).unwrap();
            let g = MetricField::flat(&mesh);
            let v = sample_scalar(&mesh, |p| -p[0].cos()).unwrap();
            let k = optimal_k(&g, &v, Infinite).unwrap();
            let err = (0..mesh.len())
                .map(|node| {
                    let c = mesh.coordinates(node)[0].cos();
                    // brute-force eigenvalues of diag(cos x, 0)
                    let exact = if c < 0.0 { c } else { 0.0 };
                    (k.values()[node] - exact).abs()
                })
                .fold(0.0, f64::max);
            errs.push(err);
        }
        assert!(errs[2] < 1e-3, "{errs:?}");

        let sphere = sphere_band(64, 256);
        let k = optimal_k(&sphere, &zero(sphere.mesh()), Finite(2.0)).unwrap();
        let interior = sphere.mesh().seam_interior(CURVATURE_MARGIN);
        for node in (0..k.len()).filter(|&i| interior[i]) {
            assert!((k.values()[node] - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn optimal_k_monotone_in_dimension() {
        let mesh = build_torus_mesh(24, 24, 2.0 * PI, 2.0 * PI).unwrap();
        let g = sample_metric(&mesh, |p| linalg::diag(1.0 + 0.2 * p[1].sin(), 1.0)).unwrap();
        let v = sample_scalar(&mesh, |p| 0.5 * p[0].sin() + 0.3 * p[1].cos()).unwrap();
        let parts = TensorParts::new(&g, &v).unwrap();
        let grid = [Finite(2.1), Finite(2.5), Finite(3.0), Finite(10.0), Infinite];
        let ks: Vec<Vec<f64>> = grid.iter().map(|&nb| parts.optimal_k(nb).unwrap()).collect();
        for pair in ks.windows(2) {
            for (a, b) in pair[0].iter().zip(&pair[1]) {
                assert!(*a <= b + 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn conformal_data_examples() {
        let mesh = build_torus_mesh(16, 16, 1.0, 1.0).unwrap();
        let g = MetricField::flat(&mesh);
        let v0 = sample_scalar(&mesh, |p| p[0].sin()).unwrap();
        let (g2, v2) = conformal_data(&g, &v0, &zero(&mesh)).unwrap();
        assert_eq!(g2.values(), g.values());
        assert_eq!(v2.values(), v0.values());
        let w = sample_scalar(&mesh, |p| 0.3 * p[1].cos()).unwrap();
        let (_, v3) = conformal_data(&g, &v0, &w).unwrap();
        assert_eq!(v3.values(), v0.values());

        let circle = build_circle_mesh(16, 1.0).unwrap();
        let w = sample_scalar(&circle, |x| x[0].sin()).unwrap();
        let (_, v) = conformal_data(&MetricField::flat(&circle), &zero(&circle), &w).unwrap();
        for (a, b) in v.values().iter().zip(w.values()) {
            assert_eq!(*a, -b);
        }
    }

    #[test]
    fn flat_bochner_equality() {
        let mesh = build_torus_mesh(64, 64, 2.0 * PI, 2.0 * PI).unwrap();
        let g = MetricField::flat(&mesh);
        let f = sample_scalar(&mesh, |p| (p[0] + 2.0 * p[1]).sin() + 0.5 * (2.0 * p[0]).cos()).unwrap();
        let r = improved_bochner_check(&g, &zero(&mesh), Finite(2.0), &f).unwrap();
        let scale = r.scale.max();
        let max_abs = r.defect.values().iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(max_abs < 2e-2 * scale, "{max_abs} vs {scale}");
    }

    #[test]
    fn sphere_bochner_equality_for_first_harmonic() {
        let mut errs = Vec::new();
        for (nt, np) in [(32, 128), (64, 256)] {
            let g = sphere_band(nt, np);
            let mesh = g.mesh().clone();
            let f = sample_scalar(&mesh, |p| p[0].sin() * p[1].cos()).unwrap();
            let r = improved_bochner_check(&g, &zero(&mesh), Finite(2.0), &f).unwrap();
            let err = (0..mesh.len())
                .filter(|&i| r.interior[i])
                .map(|i| r.defect.values()[i].abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        assert!(errs[1] < 1e-2 && slope(&errs) > 1.5, "{errs:?}");
    }

    #[test]
    fn weighted_bochner_nonnegative() {
        let mesh = build_torus_mesh(64, 64, 2.0 * PI, 2.0 * PI).unwrap();
        let g = MetricField::flat(&mesh);
        let v = sample_scalar(&mesh, |p| -p[0].cos()).unwrap();
        let f = sample_scalar(&mesh, |p| (p[0] - p[1]).sin() + 0.3 * (p[1] + 0.4).cos() + 0.2 * (2.0 * p[0]).sin()).unwrap();
        let r = improved_bochner_check(&g, &v, Infinite, &f).unwrap();
        assert!(r.min_defect >= -1e-2 * r.scale.max(), "{}", r.min_defect);
    }

    #[test]
    fn predicted_kprime_examples() {
        let mesh = build_torus_mesh(16, 16, 1.0, 1.0).unwrap();
        let k = sample_scalar(&mesh, |p| 0.5 + p[0]).unwrap();
        let z = zero(&mesh);
        let same = predicted_kprime(&k, Finite(3.0), Infinite, &z, &z, &z).unwrap();
        assert_eq!(same.values(), k.values());
        let c = ScalarField::constant(mesh.clone(), 0.25).unwrap();
        let scaled = predicted_kprime(&k, Finite(3.0), Finite(4.0), &c, &z, &z).unwrap();
        for (a, b) in scaled.values().iter().zip(k.values()) {
            assert_eq!(*a, (-0.5f64).exp() * b);
        }
        let w = sample_scalar(&mesh, |p| p[1]).unwrap();
        let gws = ScalarField::constant(mesh.clone(), 2.0).unwrap();
        let lap = sample_scalar(&mesh, |p| p[0] * p[1]).unwrap();
        let a = predicted_kprime(&k, Finite(2.0), Finite(7.0), &w, &gws, &lap).unwrap();
        let b = predicted_kprime(&k, Finite(2.0), Infinite, &w, &gws, &lap).unwrap();
        assert_eq!(a.values(), b.values());
        assert!(predicted_kprime(&k, Finite(3.0), Finite(3.0), &w, &gws, &lap).is_err());

        let mut prev: Option<Vec<f64>> = None;
        for np in [Finite(3.5), Finite(5.0), Finite(20.0), Infinite] {
            let p = predicted_kprime(&k, Finite(3.0), np, &w, &gws, &lap).unwrap().into_values();
            if let Some(q) = prev {
                assert!(q.iter().zip(&p).all(|(a, b)| a <= b));
            }
            prev = Some(p);
        }
    }

    #[test]
    fn identity_weight_passes_with_monotone_defect() {
        let mesh = build_torus_mesh(32, 32, 2.0 * PI, 2.0 * PI).unwrap();
        let g = MetricField::flat(&mesh);
        let v = sample_scalar(&mesh, |p| 0.3 * p[0].sin()).unwrap();
        let r = verify_theorem_B(&g, &v, Finite(3.0), &zero(&mesh), Finite(4.0), 1e-10).unwrap();
        assert!(r.pass());
        let k3 = optimal_k(&g, &v, Finite(3.0)).unwrap();
        let k4 = optimal_k(&g, &v, Finite(4.0)).unwrap();
        for i in 0..mesh.len() {
            assert!((r.defect[i] - (k4.values()[i] - k3.values()[i])).abs() < 1e-14);
        }
    }

    #[test]
    fn circle_theorem_b_closed_form() {
        let n = 256;
        let mesh = build_circle_mesh(n, 2.0 * PI).unwrap();
        let g = MetricField::flat(&mesh);
        let w = sample_scalar(&mesh, |x| 0.1 * x[0].cos()).unwrap();
        let r = verify_theorem_B(&g, &zero(&mesh), Finite(2.0), &w, Infinite, 1e-4).unwrap();
        assert!(r.pass(), "{:?}", r.summary);
        for node in 0..n {
            let t = mesh.coordinates(node)[0];
            let pred = (-0.2 * t.cos()).exp() * 0.1 * t.cos();
            assert!((r.predicted[node] - pred).abs() < 1e-4);
            // brute-force oracle: Hess_{g'}(-w) / g' = e^{-2w}(-w'' + w'^2)
            let (wp, wpp) = (-0.1 * t.sin(), -0.1 * t.cos());
            let oracle = (-0.2 * t.cos()).exp() * (-wpp + wp * wp);
            assert!((r.oracle[node] - oracle).abs() < 1e-4);
        }
    }

    #[test]
    fn sphere_theorem_b_passes() {
        let g = sphere_band(64, 256);
        let mesh = g.mesh().clone();
        let w = sample_scalar(&mesh, |p| 0.05 * p[0].cos()).unwrap();
        let r = verify_theorem_B(&g, &zero(&mesh), Finite(2.0), &w, Finite(4.0), 1e-4).unwrap();
        assert!(r.pass(), "{:?}", r.summary);
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), mesh.len() + 1);
        assert!(r.summary_json().unwrap().contains("min_defect"));
    }
}
