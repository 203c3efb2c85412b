from __future__ import annotations

import math

import numpy as np
import pytest

from mfshare.benchmarks import analytic, theoretical
from mfshare.benchmarks import reaction_diffusion as rd
from mfshare.dimred import AnalyticGradient, PushforwardGradient, estimate_c_matrix
from mfshare.distributions import UniformBox, in_support, make_rng, sample
from mfshare.errors import ParameterError, ShapeError
from mfshare.estimators import pearson

BOX = UniformBox((-1.0, -1.0), (1.0, 1.0))
GOLDEN_HF = 0.4535649555323743  # D_u=1e-3, D_v=5e-3, k=1e-3 on the 64^2 / 400-step grid


# --------------------------------------------------------------------------- reaction-diffusion


def test_constant_fields():
    cfg = rd.RDConfig(m=8, steps=10)
    a, b = 0.7, -0.2
    u, v = np.full((8, 8), a), np.full((8, 8), b)
    assert np.array_equal(rd.laplacian(u, cfg.dx), np.zeros((8, 8)))
    fu, fv = rd.rd_rhs(u, v, cfg)
    assert np.allclose(fu, a - a**3 - cfg.k - b, rtol=0, atol=1e-15)
    assert np.allclose(fv, a - b, rtol=0, atol=1e-15)


def test_laplacian_of_bump_sums_to_zero():
    F = np.zeros((9, 9))
    F[4, 4] = 1.0
    L = rd.laplacian(F, 0.1)
    assert abs(L.sum()) < 1e-10
    assert L[4, 4] == pytest.approx(-400.0)
    # zero-flux boundaries conserve the sum for a corner bump too
    F = np.zeros((5, 5))
    F[0, 0] = 1.0
    assert abs(rd.laplacian(F, 0.5).sum()) < 1e-12


def test_zero_diffusion_matches_fine_ode_reference():
    u0, v0 = rd.make_ic(3, 4)
    cfg = rd.RDConfig(m=4, steps=400, du=0.0, dv=0.0)
    ref = rd.RDConfig(m=4, steps=4000, du=0.0, dv=0.0)
    u, v = rd.rd_solve(cfg, u0, v0)
    ur, vr = rd.rd_solve(ref, u0, v0)
    assert max(np.max(np.abs(u - ur)), np.max(np.abs(v - vr))) < 1e-6


def test_pure_diffusion_conserves_mass():
    u0, v0 = rd.make_ic(1, 16)
    cfg = rd.RDConfig(m=16, steps=100, du=3e-3, dv=5e-3, reactions=False)
    mass0 = (u0.sum(), v0.sum())
    drift = []

    def cb(step, u, v):
        drift.append(max(abs(u.sum() - mass0[0]), abs(v.sum() - mass0[1])) / (16 * 16))

    rd.rd_solve(cfg, u0, v0, cb)
    assert len(drift) == 100
    assert max(drift) < 1e-12


def test_cfl_guards():
    assert rd.check_cfl(64, 400, 6e-3) < 0.07
    assert rd.check_cfl(16, 100, 6e-3) < 0.02
    with pytest.raises(ParameterError):
        rd.check_cfl(64, 400, 0.03)
    with pytest.raises(ParameterError):
        rd.solve_qoi_batch([0.05], [0.05], [1e-3], 64, 400)


def test_reflection_symmetry():
    u0, v0 = rd.make_ic(5, 16)
    cfg = rd.RDConfig(m=16, steps=40)
    u, v = rd.rd_solve(cfg, u0, v0)
    uf, vf = rd.rd_solve(cfg, u0[:, ::-1], v0[:, ::-1])
    assert np.max(np.abs(uf - u[:, ::-1])) < 1e-12
    assert np.max(np.abs(vf - v[:, ::-1])) < 1e-12


def test_qoi_examples():
    assert rd.rd_qoi(np.zeros((4, 4)), np.zeros((4, 4))) == 0.0
    assert rd.rd_qoi(np.ones((4, 4)), -np.ones((4, 4))) == 2.0
    assert np.allclose(rd.rd_qoi(np.ones((3, 4, 4)), np.zeros((3, 4, 4))), 1.0)


def test_golden_hf_value_and_finer_grid():
    q = rd.solve_qoi_batch(1e-3, 5e-3, 1e-3, 64, 400)[0]
    assert q == pytest.approx(GOLDEN_HF, rel=1e-10)
    q128 = rd.solve_qoi_batch(1e-3, 5e-3, 1e-3, 128, 1600)[0]
    assert abs(q128 - q) / q < 0.05


def test_compiled_kernel_matches_array_solver():
    cfg = rd.RDConfig(m=16, steps=100, du=2e-3, dv=4e-3, k=0.8e-3)
    u, v = rd.rd_snapshot(cfg)
    q = rd.solve_qoi_batch(2e-3, 4e-3, 0.8e-3, 16, 100)[0]
    assert abs(q - rd.rd_qoi(u, v)) < 1e-12


def test_lf_refinement_converges():
    qs = [rd.solve_qoi_batch(3e-3, 3e-3, 1e-3, m, s)[0] for m, s in ((16, 100), (32, 200), (64, 400))]
    assert abs(qs[2] - qs[1]) < abs(qs[1] - qs[0])


def test_fixed_ic_and_models():
    a = rd.make_ic()
    b = rd.make_ic()
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    lu, _ = rd.ic_for_grid(16)
    assert lu.shape == (16, 16) and np.allclose(lu, rd.block_average(a[0], 4))
    with pytest.raises(ShapeError):
        rd.block_average(np.zeros((6, 6)), 4)
    hf, lf = rd.rd_models()
    assert lf.cost == 0.1 and hf.cost == 1.0
    X = sample(hf.law, 500, 2).values
    assert np.all(in_support(hf.law, X))
    Z = rd.hf_to_lf(X)
    assert np.all(in_support(lf.law, Z))
    assert np.allclose(Z[:, 0], 0.5 * (X[:, 0] + X[:, 1]))


def test_rd_models_evaluate_and_correlate():
    hf, lf = rd.rd_models(hf_cells=16, hf_steps=100)
    X = sample(hf.law, 40, 3).values
    y_hf = hf(X)
    y_lf = lf(rd.hf_to_lf(X))
    assert np.all(np.isfinite(y_hf)) and np.all(y_hf > 0)
    assert pearson(y_hf, y_lf) > 0.3


def test_snapshot_csv_format():
    text = rd.snapshot_csv(np.zeros((2, 2)), np.ones((2, 2)))
    lines = text.strip().split("\n")
    assert lines[0] == "i,j,x,y,u,v"
    assert len(lines) == 5
    assert lines[1] == "0,0,-0.5,-0.5,0.0,1.0"


# --------------------------------------------------------------------------- analytic pair


def test_analytic_mean_against_monte_carlo():
    X = sample(BOX, 10**6, 4).values
    y = analytic.q_hf(X)
    se = y.std(ddof=1) / math.sqrt(y.size)
    assert abs(y.mean() - analytic.EXACT_MEAN) < 3 * se


def test_analytic_gradients_match_fd():
    X = make_rng(0).uniform(-0.95, 0.95, (50, 2))
    h = 1e-6
    for fn, grad in ((analytic.q_hf, analytic.grad_hf), (analytic.q_lf, analytic.grad_lf)):
        fd = np.column_stack([(fn(X + h * e) - fn(X - h * e)) / (2 * h) for e in np.eye(2)])
        assert np.max(np.abs(grad(X) - fd)) < 1e-7


def test_analytic_pair_fields():
    pair = analytic.analytic_pair(0.05)
    assert pair.lf.cost == 0.05 and pair.exact_mean == analytic.EXACT_MEAN
    assert pair.hf.gradient is analytic.grad_hf


# --------------------------------------------------------------------------- theoretical oracles


def test_theoretical_oracle_values():
    o = theoretical.theoretical_oracles()
    assert theoretical.RHO == pytest.approx(0.857492926, abs=1e-9)
    assert np.allclose(o.W_lf.T @ o.W_lf, 1.0)
    assert o.C_lf @ o.W_lf[:, 0] == pytest.approx(np.linalg.eigvalsh(o.C_lf)[-1] * o.W_lf[:, 0])
    X = sample(BOX, 10**6, 5).values
    assert abs(pearson(theoretical.q_hf(X), theoretical.q_lf(X)) - theoretical.RHO) < 0.01


def test_theoretical_sampled_c_matrices():
    o = theoretical.theoretical_oracles()
    X = sample(BOX, 2 * 10**5, 6).values
    for grad, C in ((theoretical.grad_hf, o.C_hf), (theoretical.grad_lf, o.C_lf)):
        Ch = estimate_c_matrix(PushforwardGradient(AnalyticGradient(grad), o.T), X)
        assert np.max(np.abs(Ch - C)) < 0.01


def test_theoretical_latent_maps():
    o = theoretical.theoretical_oracles()
    z = np.linspace(-1.99, 1.99, 101)
    assert np.allclose(o.u_hf(z), 2 * np.array([o.latent_hf.cdf(t) for t in z]) - 1)
    z = np.linspace(-2.49, 2.49, 101)
    assert np.allclose(o.u_lf(z), 2 * np.array([o.latent_lf.cdf(t) for t in z]) - 1)
    # the decoders invert the encoders along the diagonal
    t = np.linspace(-1, 1, 11)
    assert np.allclose(o.encoder_hf(o.decoder_hf(t)), t)
    assert np.allclose(o.encoder_lf(o.decoder_lf(t)), t)
