//! Algebraic core of the time-change transformation: the dimensional
//! coefficient `(N-2)(N'-2)/(N'-N)`, the Hessian matrix inequality for the
//! time-changed Hessian, and the 2x2 quadratic form that controls the
//! mixed `(Δf - tr H_f, Γ(f,w))` terms.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg;

/// Dimension parameter `N`: a finite real `>= 1` or infinity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DimensionBound {
    Finite(f64),
    Infinite,
}

impl DimensionBound {
    pub fn finite(n: f64) -> Result<Self> {
        if !n.is_finite() || n < 1.0 {
            return Err(Error::DimensionRange(format!("N = {n} must be a finite real >= 1")));
        }
        Ok(Self::Finite(n))
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Self::Finite(_))
    }

    pub fn value(&self) -> f64 {
        match *self {
            Self::Finite(n) => n,
            Self::Infinite => f64::INFINITY,
        }
    }

    /// `1/N`, which is 0 for `N = ∞`.
    pub fn reciprocal(&self) -> f64 {
        match *self {
            Self::Finite(n) => 1.0 / n,
            Self::Infinite => 0.0,
        }
    }

    /// `1/(N - n)` for a local dimension `n`; 0 when `N = ∞`.
    ///
    /// `N == n` uses the convention that the term vanishes, which is only
    /// meaningful when the quantity it multiplies is itself zero.
    pub fn excess_reciprocal(&self, n: f64) -> f64 {
        match *self {
            Self::Finite(big) if big > n => 1.0 / (big - n),
            _ => 0.0,
        }
    }
}

impl Eq for DimensionBound {}

impl PartialOrd for DimensionBound {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for DimensionBound {
    fn cmp(&self, other: &Self) -> Ordering {
        self.value().total_cmp(&other.value())
    }
}

impl fmt::Display for DimensionBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Finite(n) => write!(f, "{n}"),
            Self::Infinite => write!(f, "inf"),
        }
    }
}

impl FromStr for DimensionBound {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "∞" => Ok(Self::Infinite),
            other => {
                let v: f64 = other
                    .parse()
                    .map_err(|_| Error::DimensionRange(format!("cannot parse dimension bound {s:?}")))?;
                Self::finite(v)
            }
        }
    }
}

impl Serialize for DimensionBound {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::Finite(n) => s.serialize_f64(*n),
            Self::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for DimensionBound {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        let parsed = match Raw::deserialize(d)? {
            Raw::Num(n) => Self::finite(n),
            Raw::Str(s) => s.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

/// `(N-2)(N'-2)/(N'-N)`, with the `N' = ∞` limit `N - 2`.
pub fn coefficient(n: DimensionBound, nprime: DimensionBound) -> Result<f64> {
    let DimensionBound::Finite(big_n) = n else {
        return Err(Error::DimensionRange("N must be finite".into()));
    };
    if big_n < 2.0 {
        return Err(Error::DimensionRange(format!("N = {big_n} is outside [2, ∞)")));
    }
    if nprime <= n {
        return Err(Error::DimensionRange(format!("N' = {nprime} must lie in N' ∈ (N, ∞] with N = {big_n}")));
    }
    Ok(match nprime {
        DimensionBound::Infinite => big_n - 2.0,
        DimensionBound::Finite(np) => (big_n - 2.0) * (np - 2.0) / (np - big_n),
    })
}

/// Pointwise data for the Hessian matrix inequality. `lap_f` is kept
/// separate from the trace of `hess_f`: on weighted spaces they differ.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HessianSample {
    pub n: usize,
    /// Row-major `n x n`, symmetric.
    pub hess_f: Vec<f64>,
    pub grad_f: Vec<f64>,
    pub grad_w: Vec<f64>,
    pub lap_f: f64,
}

impl HessianSample {
    pub fn new(n: usize, hess_f: Vec<f64>, grad_f: Vec<f64>, grad_w: Vec<f64>, lap_f: f64) -> Result<Self> {
        if n == 0 || hess_f.len() != n * n || grad_f.len() != n || grad_w.len() != n {
            return Err(Error::InvalidArgument(format!("inconsistent sizes for dimension {n}")));
        }
        let all = hess_f.iter().chain(&grad_f).chain(&grad_w).chain(std::iter::once(&lap_f));
        if let Some(v) = all.into_iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite entry {v}")));
        }
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (hess_f[i * n + j], hess_f[j * n + i]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::InvalidArgument(format!("hess_f not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self { n, hess_f, grad_f, grad_w, lap_f })
    }

    pub fn zero(n: usize) -> Self {
        Self { n, hess_f: vec![0.0; n * n], grad_f: vec![0.0; n], grad_w: vec![0.0; n], lap_f: 0.0 }
    }

    /// `⟨∇f, ∇w⟩`.
    pub fn gamma_fw(&self) -> f64 {
        self.grad_f.iter().zip(&self.grad_w).map(|(a, b)| a * b).sum()
    }

    pub fn trace_hess_f(&self) -> f64 {
        (0..self.n).map(|i| self.hess_f[i * self.n + i]).sum()
    }

    /// `H_ij = (H_f)_ij - w_i f_j - w_j f_i + ⟨∇f,∇w⟩ δ_ij`.
    pub fn transformed_hessian(&self) -> Vec<f64> {
        let n = self.n;
        let gfw = self.gamma_fw();
        let mut h = self.hess_f.clone();
        for i in 0..n {
            for j in 0..n {
                h[i * n + j] -= self.grad_w[i] * self.grad_f[j] + self.grad_w[j] * self.grad_f[i];
            }
            h[i * n + i] += gfw;
        }
        h
    }

    /// Normalisation for scale-free tolerances: `1 + |H|²_HS + (Δf)²`.
    pub fn scale(&self) -> f64 {
        let h = self.transformed_hessian();
        1.0 + h.iter().map(|v| v * v).sum::<f64>() + self.lap_f * self.lap_f
    }

    pub fn random(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut normal = || -> f64 { StandardNormal.sample(rng) };
        let a: Vec<f64> = (0..n * n).map(|_| normal()).collect();
        let mut hess_f = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                hess_f[i * n + j] = 0.5 * (a[i * n + j] + a[j * n + i]);
            }
        }
        let grad_f = (0..n).map(|_| normal()).collect();
        let grad_w = (0..n).map(|_| normal()).collect();
        let lap_f = normal();
        Self { n, hess_f, grad_f, grad_w, lap_f }
    }
}

/// `|H|²_HS + (Δf - tr H)²/(N'-n) - (Δf)²/N'`, which is nonnegative for
/// every sample. The middle term is dropped for `N' = ∞`.
pub fn matrix_inequality_defect(s: &HessianSample, nprime: DimensionBound) -> Result<f64> {
    let n = s.n as f64;
    if nprime.value() <= n {
        return Err(Error::DimensionRange(format!("N' = {nprime} must exceed the dimension {n}")));
    }
    let h = s.transformed_hessian();
    let a1: f64 = h.iter().map(|v| v * v).sum();
    let tr_h: f64 = (0..s.n).map(|i| h[i * s.n + i]).sum();
    let a2 = s.lap_f - tr_h;
    Ok(a1 + a2 * a2 * nprime.excess_reciprocal(n) - s.lap_f * s.lap_f * nprime.reciprocal())
}

/// Coefficient matrix of the quadratic form in `(Δf - tr H_f, Γ(f,w))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuarticForm {
    pub matrix: [[f64; 2]; 2],
    /// `N == n`: the first variable is identically zero and its row and
    /// column are set to zero.
    pub restricted: bool,
}

impl QuarticForm {
    pub fn min_eigenvalue(&self) -> f64 {
        linalg::min_eigenvalue(&self.matrix, 2)
    }
}

pub fn quartic_form_matrix(n_bound: DimensionBound, nprime: DimensionBound, dim: usize) -> Result<QuarticForm> {
    let DimensionBound::Finite(big_n) = n_bound else {
        return Err(Error::DimensionRange("N must be finite".into()));
    };
    let n = dim as f64;
    if dim < 1 || big_n < n {
        return Err(Error::DimensionRange(format!("need 1 <= n <= N, got n = {dim}, N = {big_n}")));
    }
    if nprime <= n_bound {
        return Err(Error::DimensionRange(format!("N' = {nprime} must lie in (N, ∞] with N = {big_n}")));
    }
    let restricted = big_n == n;
    let (a11, a12, a22) = match nprime {
        DimensionBound::Infinite => {
            let a11 = if restricted { 0.0 } else { 1.0 / (big_n - n) };
            (a11, 1.0, (big_n - 2.0) - (n - 2.0))
        }
        DimensionBound::Finite(np) => {
            let a11 = if restricted { 0.0 } else { 1.0 / (big_n - n) - 1.0 / (np - n) };
            let a12 = 1.0 - (2.0 - n) / (np - n);
            let a22 = (big_n - 2.0) * (np - 2.0) / (np - big_n) - (n - 2.0) - (n - 2.0) * (n - 2.0) / (np - n);
            (a11, a12, a22)
        }
    };
    let a12 = if restricted { 0.0 } else { a12 };
    Ok(QuarticForm { matrix: [[a11, a12], [a12, a22]], restricted })
}

/// Summary of a randomized or grid sweep, emitted as JSON for audit.
#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub kind: String,
    pub samples: usize,
    pub seed: Option<u64>,
    /// Minimum of the (scaled) defect or eigenvalue over the sweep.
    pub min_value: f64,
    pub threshold: f64,
    pub pass: bool,
    pub argmin: serde_json::Value,
    /// Number of sampled points where the quantity is zero to within the
    /// threshold (recorded, not asserted).
    pub near_zero: usize,
}

/// Random sweep of `matrix_inequality_defect / scale` for one `(n, N')`.
pub fn sweep_matrix_inequality(n: usize, nprime: DimensionBound, samples: usize, seed: u64) -> Result<SweepSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let threshold: f64 = -1e-12;
    let mut min_value = f64::INFINITY;
    let mut argmin = HessianSample::zero(n);
    let mut near_zero = 0;
    for _ in 0..samples {
        let s = HessianSample::random(n, &mut rng);
        let v = matrix_inequality_defect(&s, nprime)? / s.scale();
        if v.abs() <= threshold.abs() {
            near_zero += 1;
        }
        if v < min_value {
            min_value = v;
            argmin = s;
        }
    }
    Ok(SweepSummary {
        kind: format!("matrix-inequality n={n} N'={nprime}"),
        samples,
        seed: Some(seed),
        min_value,
        threshold,
        pass: min_value >= threshold,
        argmin: serde_json::to_value(&argmin)?,
        near_zero,
    })
}

/// The `(n, N, N')` grid used for the quadratic-form sweep:
/// `n ∈ {1, 2}`, 50 values of `N ∈ [n, 6]` and 100 values of `N'`
/// (99 geometric gaps above `N` plus `∞`), i.e. 10⁴ tuples.
pub fn quartic_sweep_grid() -> Vec<(usize, DimensionBound, DimensionBound)> {
    let mut out = Vec::with_capacity(10_000);
    for dim in [1usize, 2] {
        let lo = dim as f64;
        for i in 0..50 {
            let big_n = lo + (6.0 - lo) * i as f64 / 49.0;
            for j in 0..100 {
                let np = if j == 99 {
                    DimensionBound::Infinite
                } else {
                    // gaps from 1e-2 to 1e2
                    let gap = 10f64.powf(-2.0 + 4.0 * j as f64 / 98.0);
                    DimensionBound::Finite(big_n + gap)
                };
                out.push((dim, DimensionBound::Finite(big_n), np));
            }
        }
    }
    out
}

pub fn sweep_quartic_form(grid: &[(usize, DimensionBound, DimensionBound)]) -> Result<SweepSummary> {
    let threshold = -1e-12;
    let mut min_value = f64::INFINITY;
    let mut argmin = serde_json::Value::Null;
    let mut near_zero = 0;
    for &(dim, n_bound, nprime) in grid {
        let form = quartic_form_matrix(n_bound, nprime, dim)?;
        let lo = form.min_eigenvalue();
        if lo.abs() <= 1e-12 {
            near_zero += 1;
        }
        if lo < min_value {
            min_value = lo;
            argmin = serde_json::json!({
                "n": dim, "N": n_bound, "N_prime": nprime, "matrix": form.matrix,
            });
        }
    }
    Ok(SweepSummary {
        kind: "quartic-form".into(),
        samples: grid.len(),
        seed: None,
        min_value,
        threshold,
        pass: min_value >= threshold,
        argmin,
        near_zero,
    })
}
