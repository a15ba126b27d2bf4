"""Smoke test for the `tcbe` extension module.

Build and install it first, e.g. `pip install -e crates/python --no-build-isolation`.
"""

import math

import tcbe


def close(a, b, tol):
    assert abs(a - b) <= tol, (a, b)


def main():
    assert "flat-circle" in tcbe.MODEL_SPACES

    circle = tcbe.Model("flat-circle", 64)
    n = len(circle)
    xs = [x for x, _ in circle.coordinates()]
    gen = circle.generator()
    audit = gen.audit()
    assert audit["symmetry"] < 1e-12 and audit["row_sum"] < 1e-12

    # L sin = -sin up to O(h^2)
    lf = gen.apply([math.sin(x) for x in xs])
    assert max(abs(a + math.sin(x)) for a, x in zip(lf, xs)) < 2e-3
    gamma = gen.gamma([math.sin(x) for x in xs], [math.sin(x) for x in xs])
    assert max(abs(g - math.cos(x) ** 2) for g, x in zip(gamma, xs)) < 1e-2

    # A constant time change rescales the generator by e^{-2c}.
    w = circle.sample_weight("constant", 0.3)
    lw = gen.time_change(w).apply([math.sin(x) for x in xs])
    assert max(abs(a - math.exp(-0.6) * b) for a, b in zip(lw, lf)) < 1e-12

    close(tcbe.coefficient(2.0, math.inf), 0.0, 1e-15)
    close(tcbe.coefficient(3.0, 4.0), 2.0, 1e-15)
    try:
        tcbe.coefficient(2.0, 2.0)
    except ValueError:
        pass
    else:
        raise AssertionError("N' = N must be rejected")

    harmonic = circle.sample_weight("harmonic", 0.1)
    rep = circle.verify_theorem_b(harmonic, 2.0, 4.0, 1e-4)
    assert rep["pass"], rep
    assert len(rep["oracle"]) == n

    torus = tcbe.Model("conformal-torus", 32)
    zero = torus.sample_weight("zero")
    primal, dual = torus.distance(zero, 0, 100)
    close(primal, dual, 1e-9 * primal)

    fk = circle.feynman_kac(harmonic, [math.cos(x) for x in xs], 0, 0.3, 4000, 7)
    assert abs(fk["z_score"]) < 5.0, fk

    assert tcbe.sweep_matrix_inequality(2, 4.0, 2000, 1)["pass"]
    assert tcbe.sweep_quartic_form()["pass"]

    close(tcbe.cot_kn(0.0, 2.0, 0.5), 2.0, 1e-12)
    phi = tcbe.Cutoff(-2.0, 0.5)
    close(phi(0.1), 0.1, 1e-15)
    close(phi(10.0), phi.plateau, 1e-15)
    assert phi.audit()["pass"]

    print("tcbe smoke test passed")


if __name__ == "__main__":
    main()
