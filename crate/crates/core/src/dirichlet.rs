//! Discrete Dirichlet forms on structured meshes.
//!
//! A [`Generator`] is a sparse operator `L` together with node weights `m`
//! such that `diag(m) L` is symmetric, rows sum to zero and off-diagonal
//! entries are nonnegative. The carré du champ is the operator identity
//! `Γ(f,g) = ½(L(fg) - f Lg - g Lf)`, which for such an `L` equals
//! `½ Σ_j L_ij (f_j - f_i)(g_j - g_i)`; the second form is what gets
//! evaluated so that `Γ(f) >= 0` holds exactly in floating point.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::mesh::{Mesh, MetricField, ScalarField};
use crate::sparse::CsrMatrix;
use crate::timechange::DimensionBound;

/// Largest `|2w|` accepted by [`time_change`] before `e^{±2w}` is deemed to
/// overflow the useful range of f64.
pub const MAX_EXPONENT: f64 = 700.0;

#[derive(Debug, Clone)]
pub struct Generator {
    mesh: Arc<Mesh>,
    operator: CsrMatrix,
    measure: Vec<f64>,
}

/// Relative residuals of the three structural invariants.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GeneratorAudit {
    /// `max |m_i L_ij - m_j L_ji| / max |m_i L_ij|`.
    pub symmetry: f64,
    /// `max |Σ_j L_ij| / max |L_ii|`.
    pub row_sum: f64,
    /// Smallest off-diagonal entry.
    pub min_off_diagonal: f64,
}

impl GeneratorAudit {
    pub fn holds(&self, tol: f64) -> bool {
        self.symmetry <= tol && self.row_sum <= tol && self.min_off_diagonal >= 0.0
    }
}

fn same_mesh(a: &Arc<Mesh>, b: &Arc<Mesh>) -> Result<()> {
    if Arc::ptr_eq(a, b) || a == b {
        Ok(())
    } else {
        Err(Error::MeshMismatch { expected: a.len(), found: b.len() })
    }
}

impl Generator {
    /// Assembles `L` from symmetric edge conductances `c_ij >= 0` and node
    /// weights: `L_ij = c_ij / m_i`, `L_ii = -Σ_j L_ij`.
    pub fn from_conductances(mesh: Arc<Mesh>, edges: &[(usize, usize, f64)], measure: Vec<f64>) -> Result<Self> {
        let n = mesh.len();
        if measure.len() != n {
            return Err(Error::MeshMismatch { expected: n, found: measure.len() });
        }
        if let Some((node, &m)) = measure.iter().enumerate().find(|(_, m)| !(**m > 0.0) || !m.is_finite()) {
            return Err(Error::InvalidArgument(format!("node weight {m} at node {node} is not positive")));
        }
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, c) in edges {
            if !(c >= 0.0) || !c.is_finite() {
                return Err(Error::NegativeStencil { node: i, value: c });
            }
            if c == 0.0 || i == j {
                continue;
            }
            rows[i].push((j, c / measure[i]));
            rows[j].push((i, c / measure[j]));
        }
        for (i, row) in rows.iter_mut().enumerate() {
            let diag: f64 = row.iter().map(|&(_, v)| v).sum();
            row.push((i, -diag));
        }
        Ok(Self { mesh, operator: CsrMatrix::from_rows(rows), measure })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn operator(&self) -> &CsrMatrix {
        &self.operator
    }

    pub fn measure(&self) -> &[f64] {
        &self.measure
    }

    pub fn len(&self) -> usize {
        self.measure.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measure.is_empty()
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        self.operator.mul_vec(f)
    }

    /// `Σ m_i f_i g_i`.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.measure.iter().zip(f).zip(g).map(|((m, a), b)| m * a * b).sum()
    }

    /// `Σ m_i f_i`.
    pub fn integral(&self, f: &[f64]) -> f64 {
        self.measure.iter().zip(f).map(|(m, a)| m * a).sum()
    }

    /// Edge-sum form of `Γ(f,g)` on raw slices.
    pub fn gamma(&self, f: &[f64], g: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                let mut s = 0.0;
                for (j, l) in self.operator.row(i) {
                    if j != i {
                        s += l * (f[j] - f[i]) * (g[j] - g[i]);
                    }
                }
                0.5 * s
            })
            .collect()
    }

    /// `Γ(f,g)` through the operator identity `½(L(fg) - f Lg - g Lf)`.
    pub fn gamma_by_identity(&self, f: &[f64], g: &[f64]) -> Vec<f64> {
        let fg: Vec<f64> = f.iter().zip(g).map(|(a, b)| a * b).collect();
        let (lfg, lf, lg) = (self.apply(&fg), self.apply(f), self.apply(g));
        (0..self.len()).map(|i| 0.5 * (lfg[i] - f[i] * lg[i] - g[i] * lf[i])).collect()
    }

    /// Dirichlet energy `E(f) = Σ m_i Γ(f)_i`.
    pub fn energy(&self, f: &[f64]) -> f64 {
        self.integral(&self.gamma(f, f))
    }

    pub fn audit(&self) -> GeneratorAudit {
        let mut sym = 0.0f64;
        let mut scale = 0.0f64;
        let mut row_sum = 0.0f64;
        let mut diag_scale = 0.0f64;
        let mut min_off = f64::INFINITY;
        for i in 0..self.len() {
            let mut s = 0.0;
            for (j, l) in self.operator.row(i) {
                s += l;
                if j == i {
                    diag_scale = diag_scale.max(l.abs());
                    continue;
                }
                min_off = min_off.min(l);
                let a = self.measure[i] * l;
                let b = self.measure[j] * self.operator.get(j, i);
                sym = sym.max((a - b).abs());
                scale = scale.max(a.abs());
            }
            row_sum = row_sum.max(s.abs());
        }
        GeneratorAudit {
            symmetry: if scale > 0.0 { sym / scale } else { 0.0 },
            row_sum: if diag_scale > 0.0 { row_sum / diag_scale } else { 0.0 },
            min_off_diagonal: if min_off.is_finite() { min_off } else { 0.0 },
        }
    }

    fn check_field(&self, f: &ScalarField) -> Result<()> {
        same_mesh(&self.mesh, f.mesh())
    }

    fn field(&self, values: Vec<f64>) -> Result<ScalarField> {
        ScalarField::from_values(self.mesh.clone(), values)
    }
}

/// Finite-volume discretization of the weighted Laplace–Beltrami operator
/// `Δ_g - ∇V₀·∇` for the measure `e^{-V₀} vol_g`.
///
/// Axis edges carry the diagonal metric coefficients averaged to the edge
/// midpoint; an off-diagonal `g^{xy}` is carried by one diagonal edge per
/// cell (NE for positive, NW for negative coefficient) and subtracted from
/// the adjacent axis edges.
pub fn assemble_generator(metric: &MetricField, log_density: &ScalarField) -> Result<Generator> {
    let mesh = metric.mesh().clone();
    same_mesh(&mesh, log_density.mesh())?;
    let dim = mesh.dimension();
    let n = mesh.len();
    let h = mesh.spacing().to_vec();
    let cell = mesh.cell_volume();

    let mut coef = vec![[0.0f64; 3]; n];
    let mut measure = vec![0.0; n];
    for node in 0..n {
        let g = metric.at(node);
        let sqrt_det = linalg::det(g, dim).sqrt();
        let ginv = linalg::inverse(g, dim).ok_or(Error::SingularMetric { node })?;
        let e = (-log_density.values()[node]).exp();
        measure[node] = sqrt_det * e * cell;
        coef[node] = [ginv[0][0] * sqrt_det * e, ginv[0][1] * sqrt_det * e, ginv[1][1] * sqrt_det * e];
    }

    let mut edges = Vec::with_capacity(n * (2 * dim));
    if dim == 1 {
        for i in 0..n {
            let j = mesh.offset(i, 1, 0);
            let c = 0.5 * (coef[i][0] + coef[j][0]) / h[0];
            edges.push((i, j, c));
        }
    } else {
        let (hx, hy) = (h[0], h[1]);
        // mixed coefficient per cell, cell indexed by its lower-left node
        let cell_b: Vec<f64> = (0..n)
            .map(|i| {
                let corners = [i, mesh.offset(i, 1, 0), mesh.offset(i, 0, 1), mesh.offset(i, 1, 1)];
                0.25 * corners.iter().map(|&k| coef[k][1]).sum::<f64>()
            })
            .collect();
        for i in 0..n {
            let ex = mesh.offset(i, 1, 0);
            let ey = mesh.offset(i, 0, 1);
            let below = mesh.offset(i, 0, -1);
            let left = mesh.offset(i, -1, 0);
            let cx = hy / hx * 0.5 * (coef[i][0] + coef[ex][0]) - 0.5 * (cell_b[i].abs() + cell_b[below].abs());
            let cy = hx / hy * 0.5 * (coef[i][2] + coef[ey][2]) - 0.5 * (cell_b[i].abs() + cell_b[left].abs());
            for (j, c) in [(ex, cx), (ey, cy)] {
                if c < 0.0 {
                    return Err(Error::NegativeStencil { node: i, value: c });
                }
                edges.push((i, j, c));
            }
            let b = cell_b[i];
            if b > 0.0 {
                edges.push((i, mesh.offset(i, 1, 1), b));
            } else if b < 0.0 {
                edges.push((ex, ey, -b));
            }
        }
    }
    Generator::from_conductances(mesh, &edges, measure)
}

pub fn carre_du_champ(gen: &Generator, f: &ScalarField, g: &ScalarField) -> Result<ScalarField> {
    gen.check_field(f)?;
    gen.check_field(g)?;
    gen.field(gen.gamma(f.values(), g.values()))
}

/// `Γ₂(f; φ) = ½ Σ m Γ(f) Lφ - Σ m Γ(f, Lf) φ`.
pub fn gamma2_form(gen: &Generator, f: &ScalarField, phi: &ScalarField) -> Result<f64> {
    gen.check_field(f)?;
    gen.check_field(phi)?;
    Ok(gamma2_raw(gen, f.values(), phi.values()))
}

pub(crate) fn gamma2_raw(gen: &Generator, f: &[f64], phi: &[f64]) -> f64 {
    let gf = gen.gamma(f, f);
    let lphi = gen.apply(phi);
    let lf = gen.apply(f);
    let gflf = gen.gamma(f, &lf);
    let m = gen.measure();
    (0..gen.len()).map(|i| m[i] * (0.5 * gf[i] * lphi[i] - gflf[i] * phi[i])).sum()
}

/// `Γ₂(f;φ) - Σ m (k Γ(f) + (Lf)²/N) φ`. Nonnegative values certify the
/// curvature-dimension inequality for this `(f, φ)` pair.
pub fn be_defect(gen: &Generator, k: &ScalarField, n_bound: DimensionBound, f: &ScalarField, phi: &ScalarField) -> Result<f64> {
    gen.check_field(k)?;
    gen.check_field(f)?;
    gen.check_field(phi)?;
    if let Some((node, &value)) = phi.values().iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(Error::NegativeTestFunction { node, value });
    }
    let g2 = gamma2_raw(gen, f.values(), phi.values());
    let gf = gen.gamma(f.values(), f.values());
    let lf = gen.apply(f.values());
    let inv_n = n_bound.reciprocal();
    let m = gen.measure();
    let rhs: f64 = (0..gen.len())
        .map(|i| m[i] * (k.values()[i] * gf[i] + inv_n * lf[i] * lf[i]) * phi.values()[i])
        .sum();
    Ok(g2 - rhs)
}

/// Scale used for relative tolerances of [`be_defect`]: `Σ m Γ(f) φ`.
pub fn be_defect_scale(gen: &Generator, f: &ScalarField, phi: &ScalarField) -> f64 {
    let gf = gen.gamma(f.values(), f.values());
    gen.inner(&gf, phi.values())
}

/// `½[Γ(g, Γ(f,h)) + Γ(h, Γ(f,g)) - Γ(f, Γ(g,h))]`, the discrete
/// `H_f(∇g, ∇h)`.
pub fn hessian_via_gamma(gen: &Generator, f: &ScalarField, g: &ScalarField, h: &ScalarField) -> Result<ScalarField> {
    gen.check_field(f)?;
    gen.check_field(g)?;
    gen.check_field(h)?;
    let (f, g, h) = (f.values(), g.values(), h.values());
    let gfh = gen.gamma(f, h);
    let gfg = gen.gamma(f, g);
    let ggh = gen.gamma(g, h);
    let a = gen.gamma(g, &gfh);
    let b = gen.gamma(h, &gfg);
    let c = gen.gamma(f, &ggh);
    gen.field((0..gen.len()).map(|i| 0.5 * (a[i] + b[i] - c[i])).collect())
}

/// Base generator, weight `w`, and the time-changed generator
/// `(e^{-2w} L, e^{2w} m)`.
#[derive(Debug, Clone)]
pub struct TimeChangedPair {
    pub base: Generator,
    pub weight: ScalarField,
    pub transformed: Generator,
}

pub fn time_change(gen: &Generator, w: &ScalarField) -> Result<TimeChangedPair> {
    gen.check_field(w)?;
    for (node, &wi) in w.values().iter().enumerate() {
        if (2.0 * wi).abs() > MAX_EXPONENT {
            return Err(Error::WeightOverflow { node, w: wi });
        }
    }
    let down: Vec<f64> = w.values().iter().map(|&wi| (-2.0 * wi).exp()).collect();
    let measure: Vec<f64> = gen.measure.iter().zip(w.values()).map(|(m, &wi)| m * (2.0 * wi).exp()).collect();
    if let Some((node, _)) = measure.iter().enumerate().find(|(_, m)| !m.is_finite() || **m <= 0.0) {
        return Err(Error::WeightOverflow { node, w: w.values()[node] });
    }
    let transformed = Generator { mesh: gen.mesh.clone(), operator: gen.operator.scale_rows(&down), measure };
    let audit = transformed.audit();
    if !audit.holds(1e-12) {
        return Err(Error::Invariant(format!("time-changed generator fails its audit: {audit:?}")));
    }
    Ok(TimeChangedPair { base: gen.clone(), weight: w.clone(), transformed })
}

/// `(Γ + ε²)^{1/2} - ε` with `ε = 10⁻⁸ max Γ`.
pub fn regularized_sqrt(gamma: &[f64]) -> Vec<f64> {
    let eps = 1e-8 * gamma.iter().copied().fold(0.0, f64::max);
    gamma.iter().map(|&g| (g + eps * eps).sqrt() - eps).collect()
}

/// `∫(Lf)² dm - K E(f) - E(Γ(f)^{1/2})`; nonnegative in the continuum
/// limit when the space satisfies the curvature bound `K` with `N = ∞`.
pub fn sqrt_gamma_energy_check(gen: &Generator, k: f64, f: &ScalarField) -> Result<f64> {
    gen.check_field(f)?;
    let f = f.values();
    let lf = gen.apply(f);
    let root = regularized_sqrt(&gen.gamma(f, f));
    Ok(gen.inner(&lf, &lf) - k * gen.energy(f) - gen.energy(&root))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_circle_mesh, build_torus_mesh, sample_metric, sample_scalar};
    use crate::timechange::DimensionBound::{Finite, Infinite};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn flat(mesh: &Arc<Mesh>) -> Generator {
        let g = MetricField::flat(mesh);
        let v = ScalarField::constant(mesh.clone(), 0.0).unwrap();
        assemble_generator(&g, &v).unwrap()
    }

    fn band_limited(mesh: &Arc<Mesh>, rng: &mut ChaCha8Rng, modes: i32) -> ScalarField {
        let mut terms = Vec::new();
        for kx in -modes..=modes {
            for ky in -modes..=modes {
                if mesh.dimension() == 1 && ky != 0 {
                    continue;
                }
                terms.push((kx as f64, ky as f64, rng.random_range(-1.0..1.0), rng.random_range(0.0..2.0 * PI)));
            }
        }
        sample_scalar(mesh, |x| {
            let y = if x.len() > 1 { x[1] } else { 0.0 };
            terms.iter().map(|(kx, ky, a, p)| a * (kx * x[0] + ky * y + p).cos()).sum()
        })
        .unwrap()
    }

    #[test]
    fn laplacian_of_cosine_is_second_order() {
        let mut errs = Vec::new();
        for n in [64, 128, 256] {
            let mesh = build_circle_mesh(n, 2.0 * PI).unwrap();
            let gen = flat(&mesh);
            let f = sample_scalar(&mesh, |x| x[0].cos()).unwrap();
            let lf = gen.apply(f.values());
            let err = (0..n)
                .map(|i| (lf[i] + mesh.coordinates(i)[0].cos()).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order > 1.9, "order {order}");
        }
    }

    #[test]
    fn constants_are_annihilated() {
        let mesh = build_torus_mesh(12, 10, 1.0, 2.0).unwrap();
        let gen = flat(&mesh);
        let lc = gen.apply(&vec![3.5; mesh.len()]);
        assert!(lc.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn weighted_symmetry_on_flat_torus() {
        let mesh = build_torus_mesh(16, 16, 2.0 * PI, 2.0 * PI).unwrap();
        let gen = flat(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f: Vec<f64> = (0..mesh.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..mesh.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = gen.inner(&gen.apply(&f), &g);
        let b = gen.inner(&f, &gen.apply(&g));
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        assert!(gen.audit().holds(1e-13));
    }

    #[test]
    fn anisotropic_metric_is_rejected() {
        let mesh = build_torus_mesh(8, 8, 1.0, 1.0).unwrap();
        let g = sample_metric(&mesh, |_| [[1.0, 1.5], [1.5, 4.0]]).unwrap();
        let v = ScalarField::constant(mesh.clone(), 0.0).unwrap();
        assert!(matches!(assemble_generator(&g, &v), Err(Error::NegativeStencil { .. })));
    }

    #[test]
    fn mild_off_diagonal_metric_keeps_invariants() {
        let mesh = build_torus_mesh(16, 16, 2.0 * PI, 2.0 * PI).unwrap();
        let g = sample_metric(&mesh, |x| [[1.0, 0.2 * x[0].sin()], [0.2 * x[0].sin(), 1.5]]).unwrap();
        let v = sample_scalar(&mesh, |x| 0.3 * x[1].cos()).unwrap();
        let gen = assemble_generator(&g, &v).unwrap();
        assert!(gen.audit().holds(1e-12), "{:?}", gen.audit());
    }

    #[test]
    fn gamma_matches_operator_identity() {
        let mesh = build_torus_mesh(10, 12, 1.0, 1.0).unwrap();
        let g = sample_metric(&mesh, |x| linalg::diag(1.0 + 0.3 * (2.0 * PI * x[0]).sin().powi(2), 1.2)).unwrap();
        let v = sample_scalar(&mesh, |x| (2.0 * PI * x[1]).sin()).unwrap();
        let gen = assemble_generator(&g, &v).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f: Vec<f64> = (0..mesh.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..mesh.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = gen.gamma(&f, &h);
        let b = gen.gamma_by_identity(&f, &h);
        let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12 * scale);
        }
    }

    #[test]
    fn gamma_of_constant_vanishes_and_parallelogram_holds() {
        let mesh = build_circle_mesh(32, 2.0 * PI).unwrap();
        let gen = flat(&mesh);
        let c = ScalarField::constant(mesh.clone(), 2.0).unwrap();
        let f = sample_scalar(&mesh, |x| x[0].sin()).unwrap();
        let g0 = carre_du_champ(&gen, &c, &f).unwrap();
        assert!(g0.values().iter().all(|&v| v == 0.0));

        let g = sample_scalar(&mesh, |x| (3.0 * x[0]).cos()).unwrap();
        let plus = f.values().iter().zip(g.values()).map(|(a, b)| a + b).collect::<Vec<_>>();
        let minus = f.values().iter().zip(g.values()).map(|(a, b)| a - b).collect::<Vec<_>>();
        let lhs: Vec<f64> = gen.gamma(&plus, &plus).iter().zip(gen.gamma(&minus, &minus)).map(|(a, b)| a + b).collect();
        let gf = gen.gamma(f.values(), f.values());
        let gg = gen.gamma(g.values(), g.values());
        for i in 0..mesh.len() {
            let rhs = 2.0 * gf[i] + 2.0 * gg[i];
            assert!((lhs[i] - rhs).abs() < 1e-12 * rhs.abs().max(1.0));
        }
    }

    #[test]
    fn gamma_of_sine_converges_to_cos_squared() {
        let mut errs = Vec::new();
        for n in [64, 128, 256] {
            let mesh = build_circle_mesh(n, 2.0 * PI).unwrap();
            let gen = flat(&mesh);
            let f = sample_scalar(&mesh, |x| x[0].sin()).unwrap();
            let g = carre_du_champ(&gen, &f, &f).unwrap();
            let err = (0..n)
                .map(|i| (g.values()[i] - mesh.coordinates(i)[0].cos().powi(2)).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        assert!((errs[1] / errs[2]).log2() > 1.9);
    }

    #[test]
    fn gamma2_with_unit_test_function_is_integrated_squared_laplacian() {
        let mesh = build_torus_mesh(16, 16, 2.0 * PI, 2.0 * PI).unwrap();
        let gen = flat(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let f = band_limited(&mesh, &mut rng, 3);
        let one = ScalarField::constant(mesh.clone(), 1.0).unwrap();
        let g2 = gamma2_form(&gen, &f, &one).unwrap();
        let lf = gen.apply(f.values());
        let expected = gen.inner(&lf, &lf);
        assert!((g2 - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn gamma2_of_sine_on_circle_tends_to_pi() {
        let mesh = build_circle_mesh(512, 2.0 * PI).unwrap();
        let gen = flat(&mesh);
        let f = sample_scalar(&mesh, |x| x[0].sin()).unwrap();
        let one = ScalarField::constant(mesh.clone(), 1.0).unwrap();
        let v = gamma2_form(&gen, &f, &one).unwrap();
        assert!((v - PI).abs() < 1e-3, "{v}");
        let c = ScalarField::constant(mesh.clone(), 1.0).unwrap();
        assert_eq!(gamma2_form(&gen, &c, &f).unwrap(), 0.0);
    }

    #[test]
    fn flat_torus_satisfies_be_zero_infinity() {
        let mesh = build_torus_mesh(32, 32, 2.0 * PI, 2.0 * PI).unwrap();
        let gen = flat(&mesh);
        let k = ScalarField::constant(mesh.clone(), 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let f = band_limited(&mesh, &mut rng, 3);
            let raw = band_limited(&mesh, &mut rng, 2);
            let lo = raw.min();
            let phi = raw.map(|v| v - lo).unwrap();
            let d = be_defect(&gen, &k, Infinite, &f, &phi).unwrap();
            let scale = be_defect_scale(&gen, &f, &phi);
            assert!(d >= -1e-8 * scale, "defect {d} scale {scale}");
        }
    }

    #[test]
    fn be_defect_errors_and_constant_case() {
        let mesh = build_circle_mesh(16, 2.0 * PI).unwrap();
        let gen = flat(&mesh);
        let k = ScalarField::constant(mesh.clone(), 0.0).unwrap();
        let f = sample_scalar(&mesh, |x| x[0].sin()).unwrap();
        let neg = sample_scalar(&mesh, |x| x[0].cos()).unwrap();
        assert!(matches!(be_defect(&gen, &k, Infinite, &f, &neg), Err(Error::NegativeTestFunction { .. })));
        let c = ScalarField::constant(mesh.clone(), 1.0).unwrap();
        let one = ScalarField::constant(mesh.clone(), 1.0).unwrap();
        assert_eq!(be_defect(&gen, &k, Finite(1.0), &c, &one).unwrap(), 0.0);
    }

    #[test]
    fn sharp_dimension_one_on_circle() {
        // In 1-D the Γ₂ density equals (Δf)², so N = 1 gives a vanishing
        // defect; on the uniform circle this also holds for the discrete form.
        let mut vals = Vec::new();
        for n in [64, 128, 256] {
            let mesh = build_circle_mesh(n, 2.0 * PI).unwrap();
            let gen = flat(&mesh);
            let k = ScalarField::constant(mesh.clone(), 0.0).unwrap();
            let f = sample_scalar(&mesh, |x| x[0].sin() + 0.3 * (2.0 * x[0]).cos()).unwrap();
            let phi = sample_scalar(&mesh, |x| 1.5 + x[0].cos()).unwrap();
            vals.push(be_defect(&gen, &k, Finite(1.0), &f, &phi).unwrap().abs());
        }
        assert!(vals.iter().all(|&v| v < 1e-12), "{vals:?}");
    }

    #[test]
    fn hessian_symmetric_and_converges() {
        let mut errs = Vec::new();
        for n in [64, 128, 256] {
            let mesh = build_circle_mesh(n, 2.0 * PI).unwrap();
            let gen = flat(&mesh);
            let f = sample_scalar(&mesh, |x| x[0].cos()).unwrap();
            let theta = sample_scalar(&mesh, |x| x[0]).unwrap();
            let g = sample_scalar(&mesh, |x| x[0].sin()).unwrap();
            let hf = hessian_via_gamma(&gen, &f, &theta, &theta).unwrap();
            let swapped_a = hessian_via_gamma(&gen, &f, &theta, &g).unwrap();
            let swapped_b = hessian_via_gamma(&gen, &f, &g, &theta).unwrap();
            for (a, b) in swapped_a.values().iter().zip(swapped_b.values()) {
                assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
            }
            // stay 4 nodes away from the chart seam of θ
            let err = (4..n - 4)
                .map(|i| (hf.values()[i] + mesh.coordinates(i)[0].cos()).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        assert!(errs[2] < 1e-3);
        assert!((errs[1] / errs[2]).log2() > 1.9, "{errs:?}");
    }

    #[test]
    fn hessian_of_affine_function_vanishes() {
        let mesh = build_torus_mesh(16, 16, 2.0 * PI, 2.0 * PI).unwrap();
        let gen = flat(&mesh);
        let x = sample_scalar(&mesh, |p| p[0]).unwrap();
        let f = sample_scalar(&mesh, |p| 2.0 * p[0] + 1.0).unwrap();
        let h = hessian_via_gamma(&gen, &f, &x, &x).unwrap();
        for node in 0..mesh.len() {
            let ix = mesh.index(node)[0];
            if (3..13).contains(&ix) {
                assert!(h.values()[node].abs() < 1e-9);
            }
        }
    }

    #[test]
    fn time_change_identities() {
        let mesh = build_torus_mesh(16, 16, 2.0 * PI, 2.0 * PI).unwrap();
        let gen = flat(&mesh);
        let zero = ScalarField::constant(mesh.clone(), 0.0).unwrap();
        let same = time_change(&gen, &zero).unwrap();
        assert_eq!(same.transformed.operator(), gen.operator());
        assert_eq!(same.transformed.measure(), gen.measure());

        let c = 0.4;
        let cw = ScalarField::constant(mesh.clone(), c).unwrap();
        let tc = time_change(&gen, &cw).unwrap();
        for (i, j, v) in gen.operator().triplets() {
            assert!((tc.transformed.operator().get(i, j) - (-2.0 * c).exp() * v).abs() <= 1e-15 * v.abs());
        }

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = band_limited(&mesh, &mut rng, 2);
        let pair = time_change(&gen, &w).unwrap();
        let f = band_limited(&mesh, &mut rng, 3);
        let g_base = gen.gamma(f.values(), f.values());
        let g_new = pair.transformed.gamma(f.values(), f.values());
        for i in 0..mesh.len() {
            let expected = (-2.0 * w.values()[i]).exp() * g_base[i];
            assert!((g_new[i] - expected).abs() <= 1e-13 * expected.abs().max(1e-300));
        }
    }

    #[test]
    fn time_change_overflow() {
        let mesh = build_circle_mesh(8, 1.0).unwrap();
        let gen = flat(&mesh);
        let w = ScalarField::constant(mesh.clone(), 400.0).unwrap();
        assert!(matches!(time_change(&gen, &w), Err(Error::WeightOverflow { .. })));
    }

    #[test]
    fn sqrt_gamma_energy_equality_case() {
        let mut vals = Vec::new();
        for n in [256, 1024] {
            let mesh = build_circle_mesh(n, 2.0 * PI).unwrap();
            let gen = flat(&mesh);
            let f = sample_scalar(&mesh, |x| x[0].sin()).unwrap();
            vals.push(sqrt_gamma_energy_check(&gen, 0.0, &f).unwrap());
        }
        // |cos| has kinks, so the discrete defect decays only like h
        assert!(vals[1].abs() < 0.3 * vals[0].abs());
        assert!(vals[1].abs() < 3e-2, "{vals:?}");
        let mesh = build_circle_mesh(16, 1.0).unwrap();
        let c = ScalarField::constant(mesh.clone(), 1.0).unwrap();
        assert_eq!(sqrt_gamma_energy_check(&flat(&mesh), 0.0, &c).unwrap(), 0.0);
    }

    #[test]
    fn sqrt_gamma_energy_random_torus() {
        let mesh = build_torus_mesh(64, 64, 2.0 * PI, 2.0 * PI).unwrap();
        let gen = flat(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..5 {
            let f = band_limited(&mesh, &mut rng, 2);
            let lf = gen.apply(f.values());
            let scale = gen.inner(&lf, &lf);
            let d = sqrt_gamma_energy_check(&gen, 0.0, &f).unwrap();
            assert!(d >= -1e-6 * scale, "{d} vs {scale}");
        }
    }
}
