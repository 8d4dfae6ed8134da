import numpy as np
import pytest

from ddmhe.mhe import (ConfigError, DataDrivenMHE, EstimatorConfig, EstimatorState, EstimatorStateError,
                       HankelBlocks, build_nominal_problem, build_problem, build_robust_problem,
                       robust_weight_minima, stage_weights, step, validate_config, write_estimates_csv)
from ddmhe.plant import DataSet, NoiseSpec, collect_offline_data, simulate_lti, sinusoidal_input
from ddmhe.solver import lambda_min, solve_qp
from ddmhe.trajectories import Trajectory

from conftest import kkt_oracle

X0 = np.full(4, 7.0)


def _cfg(**kw):
    base = dict(L=7, rho=0.95, P_weight=500 * np.eye(4), R_weight=500 * np.eye(2), state_lower=np.zeros(4))
    base.update(kw)
    return EstimatorConfig(**base)


def _robust_cfg(**kw):
    base = dict(mode="robust", c_alpha=2000.0, c_sigma_x=600.0, eps_x_bound=0.003, eps_y_bound=0.003)
    base.update(kw)
    return _cfg(**base)


@pytest.fixture(scope="module")
def blocks(clean_fourtank_data):
    return HankelBlocks.from_dataset(clean_fourtank_data, 7)


def _fill(state, u, y, upto):
    """Advance a state to ``t = upto`` without solving (windows and history only)."""
    for t in range(upto):
        state.estimate_history[t] = np.zeros(4)
        state.window_u.append(u[t])
        state.window_y.append(y[t])
        state.t += 1
    return state


def test_zero_noise_exactness(fourtank, blocks):
    rec = simulate_lti(fourtank, X0, sinusoidal_input(50))
    est = DataDrivenMHE(blocks, _cfg(), X0)
    x_hat = est.run(rec.u.samples, rec.y_measured.samples)
    assert np.abs(x_hat - rec.x.samples).max() <= 1e-6
    assert all(r.status in ("optimal", "prior") for r in est.records)


def test_shape_audit(fourtank, blocks):
    rec = simulate_lti(fourtank, X0, sinusoidal_input(10))
    st = _fill(EstimatorState(7, X0), rec.u.samples, rec.y_measured.samples, 8)
    prob = build_nominal_problem(blocks, st, _cfg())
    N, L = blocks.N, 7
    assert prob.qp.d == N - L
    assert prob.qp.A_eq.shape == (2 * L, N - L)
    assert prob.qp.A_in.shape == (4 * (L + 1), N - L)
    unbounded = build_nominal_problem(blocks, st, _cfg(state_lower=None))
    assert unbounded.qp.A_in.shape[0] == 0
    rob = build_robust_problem(blocks, st, _robust_cfg())
    assert rob.qp.d == N - L + 32


def test_stage_weights_order():
    np.testing.assert_allclose(stage_weights(3, 0.5), [0.125, 0.25, 0.5])


def test_horizon_one_cost_by_hand():
    # x+ = 0.5 x + u, y = x; offline data generated exactly
    rng = np.random.default_rng(0)
    u = rng.uniform(-1, 1, (12, 1))
    x = np.zeros((12, 1))
    for k in range(11):
        x[k + 1] = 0.5 * x[k] + u[k]
    ds = DataSet(Trajectory(u), Trajectory(x), Trajectory(x.copy()))
    hb = HankelBlocks.from_dataset(ds, 1)
    cfg = EstimatorConfig(L=1, rho=0.8, P_weight=np.eye(1) * 2.0, R_weight=np.eye(1) * 3.0)
    st = EstimatorState(1, np.array([1.0]))
    st.estimate_history[0] = np.array([1.0])
    st.window_u.append(np.array([0.4]))
    st.window_y.append(np.array([1.5]))
    st.t = 1
    prob = build_nominal_problem(hb, st, cfg)
    sol = prob.decode(solve_qp(prob.qp))
    # candidate x0 = a: cost = 0.8*2*(a - 1)^2 + 0.8*3*(1.5 - a)^2, minimized at a = 1.3
    a = (1.6 * 1.0 + 2.4 * 1.5) / 4.0
    assert sol.x_hat_seq[0, 0] == pytest.approx(a, abs=1e-7)
    assert sol.x_hat[0] == pytest.approx(0.5 * a + 0.4, abs=1e-7)
    assert sol.cost == pytest.approx(1.6 * (a - 1) ** 2 + 2.4 * (1.5 - a) ** 2, abs=1e-7)


def test_objective_matches_kkt_oracle(fourtank, blocks):
    rng = np.random.default_rng(1)
    rec = simulate_lti(fourtank, X0, sinusoidal_input(12), NoiseSpec.gaussian(0, 0.5, seed=2))
    st = _fill(EstimatorState(7, X0), rec.u.samples, rec.y_measured.samples, 9)
    st.estimate_history[2] = X0 + rng.standard_normal(4)
    prob = build_nominal_problem(blocks, st, _cfg(state_lower=None))
    qp = prob.qp
    z_ref, _ = kkt_oracle(qp.H + 1e-9 * np.eye(qp.d), qp.f, qp.A_eq, qp.b_eq)
    res = solve_qp(qp)
    x_ref = blocks.Hx[-4:] @ z_ref
    np.testing.assert_allclose(prob.decode(res).x_hat, x_ref, atol=1e-5)
    assert res.objective == pytest.approx(qp.objective(z_ref), rel=1e-7, abs=1e-7)


def test_t0_returns_prior(blocks):
    st = EstimatorState(7, np.array([1.0, 2, 1, 2]))
    x = step(st, blocks, _cfg(), np.zeros(2), np.zeros(2))
    np.testing.assert_array_equal(x, [1, 2, 1, 2])
    assert st.records[0].status == "prior" and st.t == 1


def test_filtering_prior_index():
    st = EstimatorState(3, np.zeros(2))
    for t in range(6):
        st.estimate_history[t] = np.full(2, float(t))
    for t, ref in ((1, 0), (2, 0), (3, 0), (4, 1), (5, 2)):
        st.t = t
        prior, idx = st.prior()
        assert idx == ref and prior[0] == (ref if t >= 3 else 0.0)


def test_causality(fourtank, blocks):
    rec = simulate_lti(fourtank, X0, sinusoidal_input(15), NoiseSpec.gaussian(0, 0.5, seed=4))
    u, y = rec.u.samples, rec.y_measured.samples
    a = DataDrivenMHE(blocks, _cfg(), [1, 2, 1, 2])
    b = DataDrivenMHE(blocks, _cfg(), [1, 2, 1, 2])
    y2 = y.copy()
    y2[10] += 100.0
    xa = a.run(u[:11], y[:11])
    xb = b.run(u[:11], y2[:11])
    np.testing.assert_array_equal(xa, xb)


def test_optimum_dominates_true_trajectory(fourtank, blocks):
    rec = simulate_lti(fourtank, X0, sinusoidal_input(20), NoiseSpec.gaussian(0, 0.5, seed=5))
    st = _fill(EstimatorState(7, [1, 2, 1, 2]), rec.u.samples, rec.y_measured.samples, 12)
    prob = build_nominal_problem(blocks, st, _cfg())
    res = solve_qp(prob.qp)
    # true trajectory in the window is representable by some alpha
    t0 = 12 - 7
    target = np.concatenate([rec.u.samples[t0:12].ravel(), rec.x.samples[t0:13].ravel()])
    M = np.vstack([blocks.Hu, blocks.Hx])
    alpha_true = np.linalg.lstsq(M, target, rcond=None)[0]
    assert np.abs(M @ alpha_true - target).max() < 1e-8
    assert res.objective <= prob.qp.objective(alpha_true) + 1e-6


def test_robust_weights():
    cfg = _robust_cfg()
    assert cfg.regularizer_weight == pytest.approx(12.0)
    assert _cfg().regularizer_weight == 0.0


def test_robust_with_zero_noise_reduces_to_nominal(fourtank, blocks):
    rec = simulate_lti(fourtank, X0, sinusoidal_input(20), NoiseSpec.gaussian(0, 0.5, seed=6))
    st = _fill(EstimatorState(7, [1, 2, 1, 2]), rec.u.samples, rec.y_measured.samples, 10)
    nom_prob = build_nominal_problem(blocks, st, _cfg())
    nom = solve_qp(nom_prob.qp)
    rob_qp = build_robust_problem(blocks, st, _robust_cfg(eps_x_bound=0.0, eps_y_bound=0.0)).qp
    # with zero regularizer weight and sigma_x = 0 the robust cost is the nominal cost
    z = np.concatenate([nom.z, np.zeros(32)])
    assert rob_qp.objective(z) == pytest.approx(nom.objective, rel=1e-9)
    # the extra slack can only lower the optimum
    assert solve_qp(rob_qp).objective <= nom.objective + 1e-6
    # fixing sigma_x = 0 through equalities recovers the nominal optimum
    A_eq = np.vstack([rob_qp.A_eq, np.hstack([np.zeros((32, nom_prob.qp.d)), np.eye(32)])])
    fixed = type(rob_qp)(rob_qp.H, rob_qp.f, A_eq, np.concatenate([rob_qp.b_eq, np.zeros(32)]),
                         rob_qp.A_in, rob_qp.lb, rob_qp.ub, rob_qp.offset)
    assert solve_qp(fixed).objective == pytest.approx(nom.objective, rel=1e-6)


def test_robust_estimator_runs_on_noisy_data(fourtank):
    ds = collect_offline_data(fourtank, NoiseSpec.uniform(0, 20, seed=1), 100,
                              NoiseSpec.truncated_gaussian(0, 0.001, 0.003, seed=2),
                              NoiseSpec.truncated_gaussian(0, 0.001, 0.003, seed=3))
    hb = HankelBlocks.from_dataset(ds, 7)
    rec = simulate_lti(fourtank, X0, sinusoidal_input(40))
    est = DataDrivenMHE(hb, _robust_cfg(), X0)
    x_hat = est.run(rec.u.samples, rec.y_measured.samples)
    assert all(r.status in ("optimal", "prior") for r in est.records)
    assert np.abs(x_hat - rec.x.samples).max() < 0.5


def test_problem_selection_and_state_errors(fourtank, blocks):
    rec = simulate_lti(fourtank, X0, sinusoidal_input(10))
    st = _fill(EstimatorState(7, X0), rec.u.samples, rec.y_measured.samples, 3)
    assert build_problem(blocks, st, _cfg()).blocks.depth == 3
    with pytest.raises(EstimatorStateError):
        build_nominal_problem(blocks, st, _cfg())
    with pytest.raises(ConfigError):
        build_robust_problem(blocks, _fill(EstimatorState(7, X0), rec.u.samples, rec.y_measured.samples, 8), _cfg())
    with pytest.raises(EstimatorStateError):
        step(EstimatorState(7, X0), blocks, _cfg(), np.zeros(2), None)


def test_config_validation():
    with pytest.raises(ConfigError):
        _cfg(rho=1.0)
    with pytest.raises(ConfigError):
        _cfg(L=0)
    with pytest.raises(ConfigError):
        _cfg(P_weight=-np.eye(4))
    with pytest.raises(ConfigError):
        _cfg(mode="robust")
    with pytest.raises(ConfigError):
        _cfg(state_lower=np.ones(4), state_upper=np.zeros(4))


def test_validate_config_flags_constant_input(fourtank):
    ds = collect_offline_data(fourtank, NoiseSpec.uniform(5, 5, seed=0), 100)
    rep = validate_config(_cfg(), dataset=ds)
    assert not rep.ok
    assert any("persistent excitation" in c.name for c in rep.failures())


def test_validate_config_with_constants(clean_fourtank_data, blocks):
    from ddmhe.euoss import estimate_euoss_constants
    c = estimate_euoss_constants(clean_fourtank_data)
    rep = validate_config(_robust_cfg(), blocks, c, clean_fourtank_data, L_min=180)
    assert rep.ok
    assert any(line.startswith("[WARN]") for line in rep.lines())
    ca, cs = robust_weight_minima(c.eta, c.p0, c.r0, 7, 100, 4, 2)
    assert ca <= 2000 and cs <= 600
    assert lambda_min(500 * np.eye(4)) >= c.p0


def test_write_estimates_csv(tmp_path, fourtank, blocks):
    rec = simulate_lti(fourtank, X0, sinusoidal_input(10))
    est = DataDrivenMHE(blocks, _cfg(), X0)
    est.run(rec.u.samples, rec.y_measured.samples)
    path = write_estimates_csv(est.records, tmp_path / "e.csv", 4)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,x_hat_1,x_hat_2,x_hat_3,x_hat_4,cost,solver_status,solve_ms"
    assert len(lines) == 11
