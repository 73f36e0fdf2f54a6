"""Smoke test for the `sprinkled` extension module.

Build and run:
    cargo build --release -p sprinkled-py --features extension-module
    cp target/release/libsprinkled.so python/sprinkled.so
    python3 python/smoke_test.py
(or `pip install --no-build-isolation ./crates/python` with maturin available).
"""

import cmath
import math

import sprinkled


def main():
    grid = sprinkled.Grid(32.0, 256)
    xs = grid.points()
    assert len(xs) == 256 and abs(grid.dx - 0.125) < 1e-15

    spec = sprinkled.LevySpec.poisson()
    m = spec.sample(0.1, grid, seed=7)
    again = spec.sample(0.1, grid, seed=7)
    assert m.atoms() == again.atoms()
    assert all(w > 0 for _, w in m.atoms())
    assert abs(sum(m.density()) * grid.dx - m.total_mass()) < 1e-9
    assert abs(sum(m.mollified_density(0.5)) * grid.dx - m.total_mass()) < 1e-9

    f = [math.exp(-x * x) for x in xs]
    lap = spec.laplace_functional_exact(0.1, grid, f)
    assert 0.0 < lap < 1.0
    assert abs(spec.characteristic_functional_exact(0.1, grid, [0.0] * 256) - 1) < 1e-14

    gamma = sprinkled.LevySpec.gamma()
    k2 = gamma.exact_joint_cumulant(0.5, [(1, 0), (1, 0)])
    assert abs(k2 - 0.5) < 1e-12, k2
    assert gamma.exact_joint_cumulant(0.5, [(1, 0), (1, 1)]) == 0.0

    psi0 = [complex(math.exp(-x * x / 4.0)) for x in xs]
    traj = sprinkled.solve_nls(grid, psi0, dt=1e-3, t_final=0.2, store_every=1, measure=m)
    mass_drift, energy_drift = traj.conservation_drift()
    assert mass_drift < 1e-12 and energy_drift < 1e-4, (mass_drift, energy_drift)

    # plane wave rotates at k^2 + 2A^2
    k = 2 * math.pi * 3 / grid.length
    wave = [cmath.exp(1j * k * x) for x in xs]
    out = sprinkled.solve_nls(grid, wave, dt=1e-3, t_final=0.5, store_every=100).last()
    expected = cmath.exp(-1j * (k * k + 2) * 0.5)
    assert max(abs(a / b - expected) for a, b in zip(out, wave)) < 1e-9

    bg = sprinkled.solve_nls(grid, psi0, dt=1e-3, t_final=0.2)
    assert bg.propagate(psi0, 0.1, 0.1) == psi0
    cov, pcov = bg.exact_covariance(0.2, f, f)
    assert cov.real > 0 and abs(cov.imag) < 1e-12 * cov.real

    try:
        sprinkled.validate_config("epsilons = [0.1]\nreplicas = 0\n[measure]\nkind = \"poisson\"\n", "demo.toml")
    except ValueError as e:
        assert "demo.toml:" in str(e), e
    else:
        raise AssertionError("invalid config accepted")

    jsonl = sprinkled.run_experiment(
        "clt",
        "epsilons = [0.1]\nreplicas = 200\nmaster_seed = 3\n[measure]\nkind = \"gamma\"\n"
        "[grid]\nlength = 16.0\ncells = 128\n",
    )
    assert '"metric":"cf_re_theta1"' in jsonl
    print("smoke test ok")


if __name__ == "__main__":
    main()
