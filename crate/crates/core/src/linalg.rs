//! Closed-form helpers for the 1x1 and 2x2 symmetric matrices that appear
//! per node. A 1-D quantity lives in the `[0][0]` slot and the rest is zero.

pub type Mat2 = [[f64; 2]; 2];

pub const ZERO: Mat2 = [[0.0; 2]; 2];

pub fn identity(dim: usize) -> Mat2 {
    let mut m = ZERO;
    for (i, row) in m.iter_mut().enumerate().take(dim) {
        row[i] = 1.0;
    }
    m
}

pub fn diag(a: f64, b: f64) -> Mat2 {
    [[a, 0.0], [0.0, b]]
}

pub fn det(m: &Mat2, dim: usize) -> f64 {
    match dim {
        1 => m[0][0],
        _ => m[0][0] * m[1][1] - m[0][1] * m[1][0],
    }
}

pub fn inverse(m: &Mat2, dim: usize) -> Option<Mat2> {
    let d = det(m, dim);
    if d == 0.0 || !d.is_finite() {
        return None;
    }
    Some(match dim {
        1 => [[1.0 / m[0][0], 0.0], [0.0, 0.0]],
        _ => [
            [m[1][1] / d, -m[0][1] / d],
            [-m[1][0] / d, m[0][0] / d],
        ],
    })
}

pub fn trace(m: &Mat2, dim: usize) -> f64 {
    (0..dim).map(|i| m[i][i]).sum()
}

pub fn symmetrize(m: &Mat2) -> Mat2 {
    let off = 0.5 * (m[0][1] + m[1][0]);
    [[m[0][0], off], [off, m[1][1]]]
}

pub fn scale(m: &Mat2, s: f64) -> Mat2 {
    [[m[0][0] * s, m[0][1] * s], [m[1][0] * s, m[1][1] * s]]
}

pub fn add(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [a[0][0] + b[0][0], a[0][1] + b[0][1]],
        [a[1][0] + b[1][0], a[1][1] + b[1][1]],
    ]
}

pub fn sub(a: &Mat2, b: &Mat2) -> Mat2 {
    add(a, &scale(b, -1.0))
}

pub fn quad_form(m: &Mat2, u: &[f64; 2], v: &[f64; 2], dim: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            s += m[i][j] * u[i] * v[j];
        }
    }
    s
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues(m: &Mat2, dim: usize) -> [f64; 2] {
    if dim == 1 {
        return [m[0][0], m[0][0]];
    }
    let (a, b, c) = (m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1]);
    let mean = 0.5 * (a + c);
    let radius = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let hi = mean + radius;
    // Recover the small eigenvalue from the determinant when the two
    // roots have very different magnitudes.
    let lo = if hi.abs() > 0.0 && mean.abs() > 10.0 * radius.abs() {
        (a * c - b * b) / hi
    } else {
        mean - radius
    };
    [lo, hi]
}

pub fn min_eigenvalue(m: &Mat2, dim: usize) -> f64 {
    sym_eigenvalues(m, dim)[0]
}

/// Smallest lambda with det(t - lambda g) = 0 for symmetric `t` and
/// positive definite `g`.
pub fn min_generalized_eigenvalue(t: &Mat2, g: &Mat2, dim: usize) -> Option<f64> {
    if dim == 1 {
        if g[0][0] <= 0.0 {
            return None;
        }
        return Some(t[0][0] / g[0][0]);
    }
    // Reduce to the ordinary problem for g^{-1/2} t g^{-1/2} via Cholesky.
    let l11 = g[0][0].sqrt();
    if !(l11 > 0.0) {
        return None;
    }
    let l21 = g[1][0] / l11;
    let d = g[1][1] - l21 * l21;
    if !(d > 0.0) {
        return None;
    }
    let l22 = d.sqrt();
    // M = L^{-1} t L^{-T}
    let inv = [[1.0 / l11, 0.0], [-l21 / (l11 * l22), 1.0 / l22]];
    let mut tmp = ZERO;
    for i in 0..2 {
        for j in 0..2 {
            tmp[i][j] = inv[i][0] * t[0][j] + inv[i][1] * t[1][j];
        }
    }
    let mut m = ZERO;
    for i in 0..2 {
        for j in 0..2 {
            m[i][j] = tmp[i][0] * inv[j][0] + tmp[i][1] * inv[j][1];
        }
    }
    Some(min_eigenvalue(&symmetrize(&m), 2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenvalues_of_diagonal() {
        let e = sym_eigenvalues(&diag(3.0, -1.0), 2);
        assert_eq!(e, [-1.0, 3.0]);
    }

    #[test]
    fn generalized_eigenvalue_matches_brute_force() {
        let t = [[2.0, 0.3], [0.3, -0.5]];
        let g = [[1.5, 0.2], [0.2, 0.7]];
        let lam = min_generalized_eigenvalue(&t, &g, 2).unwrap();
        // scan det(t - x g) for its smallest root
        let f = |x: f64| det(&sub(&t, &scale(&g, x)), 2);
        let mut prev = f(-50.0);
        let mut root = f64::NAN;
        let mut x = -50.0;
        while x < 50.0 {
            let nx = x + 1e-3;
            let v = f(nx);
            if prev.signum() != v.signum() {
                let (mut lo, mut hi) = (x, nx);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if f(lo).signum() == f(mid).signum() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                root = 0.5 * (lo + hi);
                break;
            }
            prev = v;
            x = nx;
        }
        assert!((lam - root).abs() < 1e-9, "{lam} vs {root}");
    }

    #[test]
    fn inverse_roundtrip() {
        let g = [[2.0, 0.5], [0.5, 1.0]];
        let gi = inverse(&g, 2).unwrap();
        let p00 = g[0][0] * gi[0][0] + g[0][1] * gi[1][0];
        let p01 = g[0][0] * gi[0][1] + g[0][1] * gi[1][1];
        assert!((p00 - 1.0).abs() < 1e-15 && p01.abs() < 1e-15);
    }
}
