import numpy as np
import pytest

from ddmhe.baseline import (IdentificationError, IdentifiedModel, ModelBasedMHE, build_model_based_mhe, dump_model,
                            identify_lsq, load_model)
from ddmhe.mhe import DataDrivenMHE, EstimatorConfig, EstimatorState, HankelBlocks
from ddmhe.plant import DataSet, NoiseSpec, StateSpaceModel, collect_offline_data, simulate_lti, sinusoidal_input
from ddmhe.solver import solve_qp
from ddmhe.trajectories import Trajectory


def _cfg(**kw):
    base = dict(L=7, rho=0.95, P_weight=500 * np.eye(4), R_weight=500 * np.eye(2), state_lower=np.zeros(4))
    base.update(kw)
    return EstimatorConfig(**base)


def test_exact_identification(fourtank, clean_fourtank_data):
    idm = identify_lsq(clean_fourtank_data)
    for name in "ABC":
        assert np.abs(getattr(idm.model, name) - getattr(fourtank, name)).max() < 1e-10
    assert idm.residual_state < 1e-9 and idm.residual_output < 1e-9
    np.testing.assert_array_equal(idm.model.D, 0.0)


def test_scalar_identification():
    u = np.random.default_rng(0).uniform(-1, 1, (20, 1))
    x = np.zeros((20, 1))
    for k in range(19):
        x[k + 1] = 0.5 * x[k] + u[k]
    idm = identify_lsq(DataSet(Trajectory(u), Trajectory(x), Trajectory(x.copy())), estimate_feedthrough=True)
    assert idm.model.A[0, 0] == pytest.approx(0.5, abs=1e-12)
    assert idm.model.B[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert idm.model.D[0, 0] == pytest.approx(0.0, abs=1e-12)


def test_noisy_residuals_recompute(fourtank):
    ds = collect_offline_data(fourtank, NoiseSpec.uniform(0, 20, seed=1), 100,
                              NoiseSpec.truncated_gaussian(0, 0.001, 0.003, seed=2),
                              NoiseSpec.truncated_gaussian(0, 0.001, 0.003, seed=3))
    idm = identify_lsq(ds)
    assert idm.residual_state > 0
    x, u, y = ds.x_d_noisy.samples, ds.u_d.samples, ds.y_d_noisy.samples
    m = idm.model
    rx = np.linalg.norm(x[1:].T - m.A @ x[:-1].T - m.B @ u[:-1].T)
    ry = np.linalg.norm(y[:-1].T - m.C @ x[:-1].T)
    assert abs(rx - idm.residual_state) <= 1e-12 * max(1.0, rx)
    assert abs(ry - idm.residual_output) <= 1e-12 * max(1.0, ry)
    assert np.abs(m.A - fourtank.A).max() < 0.05


def test_identification_rejects_constant_input(fourtank):
    ds = collect_offline_data(fourtank, NoiseSpec.uniform(2, 2), 40)
    with pytest.raises(IdentificationError):
        identify_lsq(ds)


def test_model_based_program_structure(fourtank):
    rec = simulate_lti(fourtank, np.full(4, 7.0), sinusoidal_input(10))
    st = EstimatorState(7, np.full(4, 7.0))
    for t in range(9):
        st.estimate_history[t] = rec.x.samples[t]
        st.window_u.append(rec.u.samples[t])
        st.window_y.append(rec.y_measured.samples[t])
        st.t += 1
    prob = build_model_based_mhe(fourtank, st, _cfg())
    assert prob.qp.d == 4 * 8 + 2 * 7
    assert prob.qp.A_eq.shape[0] == 7 * (4 + 2)
    res = solve_qp(prob.qp)
    np.testing.assert_allclose(prob.x_hat_seq(res.z)[-1], rec.x.samples[9], atol=1e-6)
    np.testing.assert_allclose(prob.sigma_y(res.z), 0.0, atol=1e-6)


def test_equivalence_with_data_driven(fourtank, clean_fourtank_data):
    rec = simulate_lti(fourtank, np.full(4, 7.0), sinusoidal_input(40), NoiseSpec.gaussian(0, 0.5, seed=4))
    cfg = _cfg()
    dd = DataDrivenMHE(HankelBlocks.from_dataset(clean_fourtank_data, 7), cfg, [1, 2, 1, 2])
    mb = ModelBasedMHE(identify_lsq(clean_fourtank_data), cfg, [1, 2, 1, 2])
    x_dd = dd.run(rec.u.samples, rec.y_measured.samples)
    x_mb = mb.run(rec.u.samples, rec.y_measured.samples)
    assert np.abs(x_dd - x_mb).max() <= 1e-5
    costs = np.array([[a.cost, b.cost] for a, b in zip(dd.records, mb.records)])
    np.testing.assert_allclose(costs[:, 0], costs[:, 1], rtol=1e-6, atol=1e-6)


def test_model_dump_roundtrip(tmp_path, clean_fourtank_data):
    idm = identify_lsq(clean_fourtank_data)
    back = load_model(dump_model(idm, tmp_path / "m.txt"))
    for name in "ABCD":
        np.testing.assert_array_equal(getattr(back, name), getattr(idm.model, name))
    plain = load_model(dump_model(StateSpaceModel([[0.5]], [[1.0]], [[2.0]]), tmp_path / "p.txt"))
    assert plain.C[0, 0] == 2.0
    assert isinstance(idm, IdentifiedModel)
