//! Heat semigroups `e^{tL}` of assembled generators, the time-changed
//! gradient estimate, and a Monte Carlo sampler for the time-changed walk.
//!
//! The deterministic solver is Crank–Nicolson written in the symmetric form
//! `(D + dt/2 S) u⁺ = (D - dt/2 S) u` with `D = diag(m)` and `S = -D L`,
//! factorized once by a sparse Cholesky decomposition.
//!
//! The walk `B` has generator `½L` and is sampled exactly by uniformization.
//! Its time change `B'_t = B_{τ_t}` runs the clock `σ_s = ∫₀^s e^{2w(B_r)} dr`,
//! so `B'` has generator `½ e^{-2w} L` and `P'_t f(x) = E_x[f(B'_{2t})]`.

use std::io::Write;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Llt;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dirichlet::{Generator, TimeChangedPair};
use crate::error::{Error, Result};
use crate::mesh::ScalarField;
use crate::smooth_oracle::CurvatureReport;
use crate::timechange::DimensionBound;

/// Relative tolerance for mass conservation and the maximum principle.
pub const INVARIANT_TOL: f64 = 1e-10;

/// Node count up to which the dense exponential reference is available.
pub const EXACT_REFERENCE_MAX_NODES: usize = 512;

/// `|K'|` below which `(1 - e^{-2K't})/(N'K')` is replaced by `2t/N'`.
pub const K_ZERO_THRESHOLD: f64 = 1e-12;

/// Crank–Nicolson propagator for a fixed generator and step size.
pub struct HeatSolver {
    gen: Generator,
    dt: f64,
    // symmetric stiffness S = -diag(m) L stored by rows
    stiffness: Vec<Vec<(usize, f64)>>,
    factor: Option<Llt<usize, f64>>,
}

impl std::fmt::Debug for HeatSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HeatSolver").field("nodes", &self.gen.len()).field("dt", &self.dt).finish()
    }
}

impl HeatSolver {
    pub fn new(gen: &Generator, dt: f64) -> Result<Self> {
        if !(dt >= 0.0) || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!("time step {dt} must be finite and nonnegative")));
        }
        let n = gen.len();
        let m = gen.measure();
        let op = gen.operator();
        // Symmetrize the off-diagonal part exactly and rebuild the diagonal so
        // that S is symmetric with zero row sums.
        let mut stiffness: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for i in 0..n {
            let mut diag = 0.0;
            for (j, l) in op.row(i) {
                if j == i {
                    continue;
                }
                let s = -0.5 * (m[i] * l + m[j] * op.get(j, i));
                stiffness[i].push((j, s));
                diag -= s;
            }
            stiffness[i].push((i, diag));
        }
        let factor = if dt > 0.0 {
            let mut trip = Vec::with_capacity(stiffness.iter().map(Vec::len).sum());
            for (i, row) in stiffness.iter().enumerate() {
                for &(j, s) in row {
                    let v = 0.5 * dt * s + if i == j { m[i] } else { 0.0 };
                    trip.push(Triplet::new(i, j, v));
                }
            }
            let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trip)
                .map_err(|e| Error::Solver(format!("matrix assembly failed: {e:?}")))?;
            Some(a.sp_cholesky(Side::Lower).map_err(|e| Error::Solver(format!("Cholesky factorization failed: {e:?}")))?)
        } else {
            None
        };
        Ok(Self { gen: gen.clone(), dt, stiffness, factor })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn generator(&self) -> &Generator {
        &self.gen
    }

    /// One step in place.
    pub fn step(&self, u: &mut [f64]) {
        let Some(factor) = &self.factor else { return };
        let m = self.gen.measure();
        let n = u.len();
        let mut rhs = Mat::<f64>::zeros(n, 1);
        for i in 0..n {
            let su: f64 = self.stiffness[i].iter().map(|&(j, s)| s * u[j]).sum();
            rhs[(i, 0)] = m[i] * u[i] - 0.5 * self.dt * su;
        }
        factor.solve_in_place(rhs.as_mut());
        for (i, ui) in u.iter_mut().enumerate() {
            *ui = rhs[(i, 0)];
        }
    }

    /// Advances `steps` steps, checking mass conservation and the maximum
    /// principle after each one.
    pub fn advance(&self, u: &mut [f64], steps: usize) -> Result<()> {
        let mass0 = self.gen.integral(u);
        let scale = self.gen.integral(&u.iter().map(|v| v.abs()).collect::<Vec<_>>());
        let lo = u.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let slack = INVARIANT_TOL * lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
        for k in 0..steps {
            self.step(u);
            let mass = self.gen.integral(u);
            if (mass - mass0).abs() > INVARIANT_TOL * scale.max(f64::MIN_POSITIVE) {
                return Err(Error::Invariant(format!("mass drifted from {mass0} to {mass} after step {}", k + 1)));
            }
            if let Some((node, &v)) = u.iter().enumerate().find(|(_, v)| **v < lo - slack || **v > hi + slack) {
                return Err(Error::Invariant(format!(
                    "maximum principle violated at node {node} after step {}: {v} outside [{lo}, {hi}]",
                    k + 1
                )));
            }
        }
        Ok(())
    }

    /// Solutions at each of `times` (nondecreasing, each a multiple of `dt`
    /// up to 10⁻⁹ relative).
    pub fn solve_at(&self, f0: &[f64], times: &[f64]) -> Result<SemigroupSolve> {
        let mut u = f0.to_vec();
        let mut done = 0usize;
        let mut solutions = Vec::with_capacity(times.len());
        for &t in times {
            let target = steps_for(t, self.dt)?;
            if target < done {
                return Err(Error::InvalidArgument("times must be nondecreasing".into()));
            }
            self.advance(&mut u, target - done)?;
            done = target;
            solutions.push(u.clone());
        }
        Ok(SemigroupSolve { times: times.to_vec(), dt: self.dt, scheme: "crank-nicolson", solutions })
    }
}

fn steps_for(t: f64, dt: f64) -> Result<usize> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("time {t} must be finite and nonnegative")));
    }
    if t == 0.0 {
        return Ok(0);
    }
    if dt == 0.0 {
        return Err(Error::InvalidArgument("zero step size with positive time".into()));
    }
    let k = (t / dt).round();
    if (k * dt - t).abs() > 1e-9 * t {
        return Err(Error::InvalidArgument(format!("time {t} is not a multiple of the step {dt}")));
    }
    Ok(k as usize)
}

/// Solution snapshots of a heat-flow run.
#[derive(Debug, Clone)]
pub struct SemigroupSolve {
    pub times: Vec<f64>,
    pub dt: f64,
    pub scheme: &'static str,
    pub solutions: Vec<Vec<f64>>,
}

impl SemigroupSolve {
    pub fn last(&self) -> &[f64] {
        self.solutions.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// `e^{t L} f₀` by Crank–Nicolson with `steps` equal steps, returning the
/// initial and final states.
pub fn heat_solve(gen: &Generator, f0: &ScalarField, t_final: f64, steps: usize) -> Result<SemigroupSolve> {
    if steps == 0 {
        return Err(Error::InvalidArgument("at least one step is required".into()));
    }
    if !(t_final >= 0.0) || !t_final.is_finite() {
        return Err(Error::InvalidArgument(format!("final time {t_final} must be finite and nonnegative")));
    }
    if gen.mesh().as_ref() != f0.mesh().as_ref() {
        return Err(Error::MeshMismatch { expected: gen.len(), found: f0.len() });
    }
    let dt = t_final / steps as f64;
    if t_final == 0.0 {
        let u = f0.values().to_vec();
        return Ok(SemigroupSolve { times: vec![0.0, 0.0], dt, scheme: "crank-nicolson", solutions: vec![u.clone(), u] });
    }
    let solver = HeatSolver::new(gen, dt)?;
    let mut u = f0.values().to_vec();
    solver.advance(&mut u, steps)?;
    Ok(SemigroupSolve {
        times: vec![0.0, t_final],
        dt,
        scheme: "crank-nicolson",
        solutions: vec![f0.values().to_vec(), u],
    })
}

/// Dense reference `e^{tL} f₀` through the eigendecomposition of the
/// symmetric matrix `D^{1/2} L D^{-1/2}`.
pub struct ExactSemigroup {
    sqrt_m: Vec<f64>,
    eigenvalues: Vec<f64>,
    eigenvectors: Mat<f64>,
}

impl ExactSemigroup {
    pub fn new(gen: &Generator) -> Result<Self> {
        let n = gen.len();
        if n > EXACT_REFERENCE_MAX_NODES {
            return Err(Error::InvalidArgument(format!(
                "dense reference limited to {EXACT_REFERENCE_MAX_NODES} nodes, got {n}"
            )));
        }
        let sqrt_m: Vec<f64> = gen.measure().iter().map(|m| m.sqrt()).collect();
        let mut a = Mat::<f64>::zeros(n, n);
        for (i, j, l) in gen.operator().triplets() {
            let v = sqrt_m[i] * l / sqrt_m[j];
            a[(i, j)] += 0.5 * v;
            a[(j, i)] += 0.5 * v;
        }
        let eig = a.self_adjoint_eigen(Side::Lower).map_err(|e| Error::Solver(format!("eigensolver failed: {e:?}")))?;
        let s = eig.S().column_vector();
        Ok(Self { sqrt_m, eigenvalues: (0..n).map(|i| s[i]).collect(), eigenvectors: eig.U().to_owned() })
    }

    pub fn apply(&self, f0: &[f64], t: f64) -> Vec<f64> {
        let n = f0.len();
        let u = &self.eigenvectors;
        let g: Vec<f64> = (0..n).map(|i| self.sqrt_m[i] * f0[i]).collect();
        let coeff: Vec<f64> = (0..n)
            .map(|k| (self.eigenvalues[k] * t).exp() * (0..n).map(|i| u[(i, k)] * g[i]).sum::<f64>())
            .collect();
        (0..n).map(|i| (0..n).map(|k| u[(i, k)] * coeff[k]).sum::<f64>() / self.sqrt_m[i]).collect()
    }
}

/// `(1 - e^{-2K't})/(N'K')`, its limit `2t/N'` near `K' = 0`, and 0 for
/// `N' = ∞`.
pub fn gradient_coefficient(kprime: f64, nprime: DimensionBound, t: f64) -> f64 {
    match nprime {
        DimensionBound::Infinite => 0.0,
        DimensionBound::Finite(np) => {
            if kprime.abs() < K_ZERO_THRESHOLD {
                2.0 * t / np
            } else {
                -(-2.0 * kprime * t).exp_m1() / (np * kprime)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientEstimateRow {
    pub t: f64,
    pub min_defect: f64,
    pub argmin: usize,
    /// `max |RHS|`, for relative reading of the defect.
    pub scale: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientEstimateReport {
    pub kprime: f64,
    pub nprime: DimensionBound,
    pub dt: f64,
    /// Whether `(K', N')` is backed by a passing curvature report.
    pub certified: bool,
    pub rows: Vec<GradientEstimateRow>,
    #[serde(skip)]
    pub defects: Vec<Vec<f64>>,
}

impl GradientEstimateReport {
    pub fn min_defect(&self) -> f64 {
        self.rows.iter().map(|r| r.min_defect).fold(f64::INFINITY, f64::min)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "node")?;
        for r in &self.rows {
            write!(out, ",defect_t{}", r.t)?;
        }
        writeln!(out)?;
        let n = self.defects.first().map_or(0, Vec::len);
        for i in 0..n {
            write!(out, "{i}")?;
            for d in &self.defects {
                write!(out, ",{}", d[i])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Pointwise `e^{-2K't} P'_t(Γ'f) - Γ'(P'_t f) - c(t) (L'P'_t f)²` on the
/// transformed generator, for each `t` in `t_list`.
pub fn gradient_estimate_check(
    pair: &TimeChangedPair,
    kprime: f64,
    nprime: DimensionBound,
    f: &ScalarField,
    t_list: &[f64],
    dt: f64,
    certificate: Option<&CurvatureReport>,
) -> Result<GradientEstimateReport> {
    let gen = &pair.transformed;
    if gen.mesh().as_ref() != f.mesh().as_ref() {
        return Err(Error::MeshMismatch { expected: gen.len(), found: f.len() });
    }
    let certified = certificate.is_some_and(|c| c.pass() && kprime <= c.min_predicted() && nprime >= c.summary.nprime);
    let solver = HeatSolver::new(gen, dt)?;
    let fv = f.values();
    let gamma_f = gen.gamma(fv, fv);
    let mut order: Vec<f64> = t_list.to_vec();
    order.sort_by(f64::total_cmp);
    let pf = solver.solve_at(fv, &order)?;
    let pg = solver.solve_at(&gamma_f, &order)?;
    let mut rows = Vec::new();
    let mut defects = Vec::new();
    for (idx, &t) in order.iter().enumerate() {
        let u = &pf.solutions[idx];
        let lu = gen.apply(u);
        let gu = gen.gamma(u, u);
        let c = gradient_coefficient(kprime, nprime, t);
        let decay = (-2.0 * kprime * t).exp();
        let d: Vec<f64> = (0..gen.len())
            .map(|i| decay * pg.solutions[idx][i] - gu[i] - c * lu[i] * lu[i])
            .collect();
        let (argmin, min_defect) = d
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
        let scale = pg.solutions[idx].iter().map(|v| (decay * v).abs()).fold(0.0, f64::max);
        rows.push(GradientEstimateRow { t, min_defect, argmin, scale });
        defects.push(d);
    }
    Ok(GradientEstimateReport { kprime, nprime, dt, certified, rows, defects })
}

/// Endpoints of independent time-changed walks started at one node.
#[derive(Debug, Clone, Serialize)]
pub struct PathEnsemble {
    pub seed: u64,
    pub x0: usize,
    pub t_target: f64,
    /// Node occupied by each path when its clock reaches `t_target`.
    pub endpoints: Vec<usize>,
    /// Base time at which each clock reached `t_target`.
    pub base_times: Vec<f64>,
    /// Number of uniformization events per path.
    pub events: Vec<u64>,
}

/// One recorded segment of a path: the node held during base time
/// `[s, s + τ)` and the clock value at its start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathSegment {
    pub node: usize,
    pub base_time: f64,
    pub clock: f64,
}

/// Uniformized jump chain of the walk with generator `½L` together with the
/// clock weights `e^{2w}`.
#[derive(Debug, Clone)]
pub struct WalkSampler {
    rate: f64,
    // cumulative jump probabilities per node: (target, cumulative prob)
    jumps: Vec<Vec<(usize, f64)>>,
    clock_speed: Vec<f64>,
    budget: u64,
}

impl WalkSampler {
    pub fn new(base: &Generator, w: &ScalarField, budget: u64) -> Result<Self> {
        if base.mesh().as_ref() != w.mesh().as_ref() {
            return Err(Error::MeshMismatch { expected: base.len(), found: w.len() });
        }
        let op = base.operator();
        let rate = 0.5 * (0..base.len()).map(|i| op.get(i, i).abs()).fold(0.0, f64::max);
        if !(rate > 0.0) {
            return Err(Error::InvalidArgument("generator has no jumps".into()));
        }
        let jumps = (0..base.len())
            .map(|i| {
                let mut acc = 0.0;
                op.row(i)
                    .filter(|&(j, _)| j != i)
                    .map(|(j, l)| {
                        acc += 0.5 * l / rate;
                        (j, acc)
                    })
                    .collect()
            })
            .collect();
        let clock_speed = w
            .values()
            .iter()
            .enumerate()
            .map(|(node, &wi)| {
                let s = (2.0 * wi).exp();
                if s.is_finite() && s > 0.0 { Ok(s) } else { Err(Error::WeightOverflow { node, w: wi }) }
            })
            .collect::<Result<_>>()?;
        Ok(Self { rate, jumps, clock_speed, budget })
    }

    /// Uniformization rate `Λ = ½ max |L_ii|`.
    pub fn rate(&self) -> f64 {
        self.rate
    }

    fn rng(seed: u64, path: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path);
        rng
    }

    /// Runs one path to clock value `t_target`; `record` sees each segment.
    fn run(&self, seed: u64, path: u64, x0: usize, t_target: f64, mut record: impl FnMut(PathSegment)) -> Result<(usize, f64, u64)> {
        let mut rng = Self::rng(seed, path);
        let (mut x, mut s, mut clock) = (x0, 0.0f64, 0.0f64);
        let mut events = 0u64;
        loop {
            record(PathSegment { node: x, base_time: s, clock });
            // two draws per event: holding time and jump target
            let u1: f64 = rng.random();
            let u2: f64 = rng.random();
            let tau = -(-u1).ln_1p() / self.rate;
            let speed = self.clock_speed[x];
            let next = clock + speed * tau;
            if next >= t_target {
                // the clock is linear within a segment, so inversion is exact
                return Ok((x, s + (t_target - clock) / speed, events));
            }
            clock = next;
            s += tau;
            events += 1;
            if events >= self.budget {
                return Err(Error::ClockBudget { target: t_target, reached: clock, budget: self.budget });
            }
            if let Some(&(j, _)) = self.jumps[x].iter().find(|&&(_, c)| u2 < c) {
                x = j;
            }
        }
    }

    /// Full trajectory of one path, regenerated from `(seed, path)`.
    pub fn replay(&self, seed: u64, path: u64, x0: usize, t_target: f64) -> Result<Vec<PathSegment>> {
        let mut out = Vec::new();
        self.run(seed, path, x0, t_target, |seg| out.push(seg))?;
        Ok(out)
    }

    pub fn simulate(&self, x0: usize, t_target: f64, n_paths: usize, seed: u64) -> Result<PathEnsemble> {
        if n_paths == 0 {
            return Err(Error::InvalidArgument("at least one path is required".into()));
        }
        if x0 >= self.jumps.len() {
            return Err(Error::NodeOutOfRange { node: x0, len: self.jumps.len() });
        }
        if !(t_target >= 0.0) || !t_target.is_finite() {
            return Err(Error::InvalidArgument(format!("target time {t_target} must be finite and nonnegative")));
        }
        let results: Vec<(usize, f64, u64)> = (0..n_paths as u64)
            .into_par_iter()
            .map(|p| self.run(seed, p, x0, t_target, |_| {}))
            .collect::<Result<_>>()?;
        Ok(PathEnsemble {
            seed,
            x0,
            t_target,
            endpoints: results.iter().map(|r| r.0).collect(),
            base_times: results.iter().map(|r| r.1).collect(),
            events: results.iter().map(|r| r.2).collect(),
        })
    }
}

/// Default event budget: thirty times the expected number of events.
fn default_budget(sampler_rate: f64, t_target: f64, min_speed: f64) -> u64 {
    (30.0 * sampler_rate * t_target / min_speed).ceil() as u64 + 1000
}

/// Samples `B'_{t_target}` for `n_paths` paths of the time-changed walk of
/// `base` with weight `w`.
pub fn simulate_time_changed_bm(base: &Generator, w: &ScalarField, x0: usize, t_target: f64, n_paths: usize, seed: u64) -> Result<PathEnsemble> {
    let probe = WalkSampler::new(base, w, u64::MAX)?;
    let min_speed = probe.clock_speed.iter().copied().fold(f64::INFINITY, f64::min);
    let sampler = WalkSampler { budget: default_budget(probe.rate, t_target, min_speed), ..probe };
    sampler.simulate(x0, t_target, n_paths, seed)
}

#[derive(Debug, Clone, Serialize)]
pub struct FeynmanKacReport {
    pub mc_mean: f64,
    pub mc_stderr: f64,
    pub pde_value: f64,
    pub z_score: f64,
    pub n_paths: usize,
    pub pass: bool,
}

/// Compares the Monte Carlo mean of `f(B'_{2t})` with `P'_t f(x₀)` on the
/// transformed generator (dense exponential up to 512 nodes, Crank–Nicolson
/// with 2000 steps otherwise).
pub fn feynman_kac_check(base: &Generator, w: &ScalarField, f: &ScalarField, x0: usize, t: f64, n_paths: usize, seed: u64) -> Result<FeynmanKacReport> {
    let pair = crate::dirichlet::time_change(base, w)?;
    let fv = f.values();
    let pde_value = if base.len() <= EXACT_REFERENCE_MAX_NODES {
        ExactSemigroup::new(&pair.transformed)?.apply(fv, t)[x0]
    } else {
        let steps = 2000;
        heat_solve(&pair.transformed, f, t, steps)?.last()[x0]
    };
    let ens = simulate_time_changed_bm(base, w, x0, 2.0 * t, n_paths, seed)?;
    let samples: Vec<f64> = ens.endpoints.iter().map(|&k| fv[k]).collect();
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let stderr = (var / n).sqrt();
    let diff = (mean - pde_value).abs();
    let z = if stderr > 0.0 {
        diff / stderr
    } else if diff <= 1e-12 * pde_value.abs().max(1.0) {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(FeynmanKacReport { mc_mean: mean, mc_stderr: stderr, pde_value, z_score: z, n_paths, pass: z <= 3.0 })
}
