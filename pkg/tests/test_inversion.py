import numpy as np
import pytest

from probeinv import units
from probeinv.forward import IntegratorConfig, NoiseSpec, inject_noise, simulate
from probeinv.inversion import (
    InversionConfig,
    InversionReport,
    SavitzkyGolay,
    ThreePoint,
    UnrecoverableStepError,
    estimate_derivatives,
    invert,
    make_readout_plan,
    ramsey_direct,
    readout_inputs,
    write_report_csv,
    write_windows_json,
)
from probeinv.invertibility import relative_degree_siso, transform_observables
from probeinv.operators import hamiltonian_term, lindblad_term, pauli, pure_state, tensor
from probeinv.signals import (
    Constant,
    DistortedStep,
    MeasurementRecord,
    ProbeModel,
    Sinusoid,
    eval_signal,
)

X, Y, Z, I2 = pauli("X"), pauli("Y"), pauli("Z"), pauli("I")
W0 = units.from_mhz(1.0)


def phase_probe(psi):
    return ProbeModel((), (hamiltonian_term(Z),), (X,), pure_state(psi))


def rel_l2(a, b, keep=None):
    if keep is not None:
        a, b = a[keep], b[keep]
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def dilated_keep(report: InversionReport, samples: int = 5):
    flags = report.flags()
    out = flags.copy()
    for i in np.where(flags)[0]:
        out[max(0, i - samples) : i + samples + 1] = True
    return ~out


# --- derivative estimation ---


def test_three_point_exact_for_affine():
    t = np.arange(0, 2, 0.1)
    rec = MeasurementRecord(0.0, 0.1, 0.3 * t + 0.7, allowance=10)
    d = estimate_derivatives(rec, 1, InversionConfig())
    assert np.max(np.abs(d[0][:, 0] - 0.3)) <= 1e-12


def test_three_point_truncation_bound_for_sine():
    # central-difference truncation error is dt^2/6 * |y'''| in the interior;
    # the one-sided end stencils carry twice that
    dt = 0.01
    t = np.arange(0, 2 + dt / 2, dt)
    rec = MeasurementRecord(0.0, dt, np.sin(t), allowance=10)
    d = estimate_derivatives(rec, 1, InversionConfig())[0][:, 0]
    interior = slice(1, -1)
    assert np.max(np.abs(d[interior] - np.cos(t[interior]))) <= 2e-5
    assert np.max(np.abs(d - np.cos(t))) <= 4e-5


def test_second_derivative_exact_for_quadratic():
    dt = 0.05
    t = np.arange(0, 3, dt)
    rec = MeasurementRecord(0.0, dt, t**2, allowance=10)
    d = estimate_derivatives(rec, 2, InversionConfig())
    assert np.max(np.abs(d[1][:, 0] - 2.0)) <= 1e-9


def test_savitzky_golay_beats_three_point_on_smooth_data():
    dt = 0.02
    t = np.arange(0, 4, dt)
    rec = MeasurementRecord(0.0, dt, np.sin(2 * t), allowance=10)
    tp = estimate_derivatives(rec, 1, InversionConfig())[0][:, 0]
    sg = estimate_derivatives(rec, 1, InversionConfig(derivative_scheme=SavitzkyGolay(9, 5)))[0][:, 0]
    truth = 2 * np.cos(2 * t)
    assert np.max(np.abs(sg - truth)) < 0.1 * np.max(np.abs(tp - truth))


def test_derivative_validation():
    rec = MeasurementRecord(0.0, 0.1, np.zeros(4), allowance=10)
    with pytest.raises(ValueError, match="too short"):
        estimate_derivatives(rec, 2, InversionConfig())
    with pytest.raises(ValueError, match="odd"):
        SavitzkyGolay(8, 3)
    with pytest.raises(ValueError, match="degree"):
        SavitzkyGolay(5, 7)
    with pytest.raises(ValueError, match="hold policy"):
        InversionConfig(hold_policy="extrapolate")


# --- input readout ---


def test_readout_singular_at_symmetric_state():
    model = phase_probe([1, 1])
    plan = make_readout_plan(model, transform_observables(model))
    with pytest.raises(UnrecoverableStepError):
        readout_inputs(model.initial_state, plan, np.zeros(1))


def test_readout_recovers_drive_at_y_eigenstate():
    # at psi = (|0> + i|1>)/sqrt(2): <L1* sx> = <-2 sy> = -2 and <L0* sx> = 0,
    # so u = rhs / (-2)
    model = phase_probe([1, 1j])
    plan = make_readout_plan(model, transform_observables(model))
    rhs = np.array([0.84])
    u, s = readout_inputs(model.initial_state, plan, rhs)
    assert u[0] == pytest.approx(-0.42, abs=1e-12)
    assert s[0] == pytest.approx(2.0, abs=1e-12)


def test_readout_least_squares_matches_exact_solve():
    q1 = [np.sqrt(2 / 3), np.sqrt(1 / 3) * np.exp(1j * np.pi / 4)]
    q2 = [np.sqrt(3) / 2, 0.5 * np.exp(-1j * np.pi / 3)]
    from probeinv.signals import build_two_qubit_model

    model = build_two_qubit_model(
        None, None, None, [tensor(X, I2), tensor(Y, I2), tensor(I2, X)], pure_state(np.kron(q1, q2))
    )
    plan = make_readout_plan(model, transform_observables(model))
    rho = model.initial_state.matrix
    M = np.einsum("kjab,ba->kj", plan.adjoint_rows, rho).real
    rng = np.random.default_rng(2)
    rhs = rng.normal(size=3)
    u, _ = readout_inputs(model.initial_state, plan, rhs)
    b = rhs - np.einsum("kab,ba->k", plan.drift_rows, rho).real
    assert np.max(np.abs(u - np.linalg.solve(M, b))) <= 1e-10


# --- full inversion round trips ---


def test_round_trip_biased_qubit_first_order():
    model = ProbeModel((hamiltonian_term(W0 * X),), (hamiltonian_term(Z),), (X,), pure_state([1, 1j]))
    sig = Sinusoid(0.3, 1.0)
    cfg = IntegratorConfig(dt=0.0025, sample_every=2)
    _, rec = simulate(model, [sig], 2 * np.pi, cfg)
    verdict = relative_degree_siso(model)
    assert verdict.relative_degree == 1
    report = invert(model, verdict, rec, InversionConfig(singular_threshold=2e-3))
    truth = eval_signal(sig, report.reconstructed.times)
    assert rel_l2(report.reconstructed.values[:, 0], truth) <= 1e-3


def test_round_trip_biased_qubit_second_order():
    # <sz> readout has relative degree 2: exercises the higher-derivative path
    model = ProbeModel((hamiltonian_term(W0 * X),), (hamiltonian_term(Z),), (Z,), pure_state([1, 1]))
    sig = DistortedStep(units.from_mhz(1.0), step_time=0.0, rise_tau=20.0)
    cfg = IntegratorConfig(dt=0.05, sample_every=1)
    _, rec = simulate(model, [sig], 150.0, cfg)
    verdict = relative_degree_siso(model)
    assert verdict.relative_degree == 2
    report = invert(model, verdict, rec, InversionConfig(singular_threshold=2e-3))
    truth = eval_signal(sig, report.reconstructed.times)
    keep = dilated_keep(report)
    assert rel_l2(report.reconstructed.values[:, 0], truth, keep) <= 1e-3


def test_round_trip_open_system():
    gamma = 0.05
    model = ProbeModel(
        (lindblad_term(np.sqrt(gamma) * Z),), (hamiltonian_term(Z),), (X,), pure_state([1, 1j])
    )
    sig = Sinusoid(0.3, 1.0)
    cfg = IntegratorConfig(dt=0.0025, sample_every=2)
    _, rec = simulate(model, [sig], 2 * np.pi, cfg)
    report = invert(model, relative_degree_siso(model), rec, InversionConfig(singular_threshold=2e-3))
    truth = eval_signal(sig, report.reconstructed.times)
    assert rel_l2(report.reconstructed.values[:, 0], truth) <= 1e-2
    assert report.singular_windows == ()


def test_state_path_tracks_forward_state():
    model = phase_probe([1, 1j])
    sig = Sinusoid(0.3, 1.0)
    cfg = IntegratorConfig(dt=0.0025, sample_every=1)
    traj, rec = simulate(model, [sig], 4.0, cfg)
    report = invert(
        model,
        transform_observables(model),
        rec,
        InversionConfig(derivative_scheme=SavitzkyGolay(9, 5), singular_threshold=2e-3),
    )
    keep = dilated_keep(report)
    rhos = np.stack([d.matrix for d in traj])
    # trace distance = (1/2) sum |eigenvalues| of the difference
    for i in np.where(keep)[0][:: max(1, keep.sum() // 50)]:
        delta = report.state_path[i] - rhos[i]
        tdist = 0.5 * np.sum(np.abs(np.linalg.eigvalsh(delta)))
        assert tdist <= 1e-6


def test_hold_policies_differ_inside_windows():
    q1 = [np.sqrt(2 / 3), np.sqrt(1 / 3)]
    q2 = [np.sqrt(3) / 2, 0.5]
    from probeinv.signals import build_two_qubit_model

    model = build_two_qubit_model(W0, W0, None, [tensor(Y, I2)], pure_state(np.kron(q1, q2)))
    sig = DistortedStep(units.from_mhz(10.0), 0.0, 20.0)
    cfg = IntegratorConfig(dt=0.05, sample_every=1)
    _, rec = simulate(model, [sig], 70.0, cfg)
    verdict = transform_observables(model)
    rep_hold = invert(model, verdict, rec, InversionConfig(singular_threshold=2e-3, hold_policy="hold_last"))
    rep_zero = invert(model, verdict, rec, InversionConfig(singular_threshold=2e-3, hold_policy="zero"))
    flags = rep_hold.flags()
    assert flags.any()
    assert np.all(rep_zero.reconstructed.values[rep_zero.flags(), 0] == 0.0)
    held = rep_hold.reconstructed.values[flags, 0]
    assert np.all(held != 0.0)


def test_singular_windows_are_maximal_flag_runs():
    model = phase_probe([1, 1j])
    cfg = IntegratorConfig(dt=0.001, sample_every=1)
    _, rec = simulate(model, [Sinusoid(1.0, 1.0)], 4.0, cfg)
    report = invert(
        model,
        transform_observables(model),
        rec,
        InversionConfig(derivative_scheme=SavitzkyGolay(9, 5), singular_threshold=1e-2),
    )
    flags = report.condition_trace[:, 0] < report.threshold
    # windows reconstructed from the condition trace match the reported ones
    t = report.reconstructed.times
    runs = []
    idx = np.where(flags)[0]
    start = prev = idx[0]
    for i in idx[1:]:
        if i == prev + 1:
            prev = i
            continue
        runs.append((t[start], t[prev]))
        start = prev = i
    runs.append((t[start], t[prev]))
    assert len(runs) == len(report.singular_windows)
    for got, want in zip(report.singular_windows, runs):
        assert got == pytest.approx(want)


def test_redundancy_never_increases_singular_measure():
    # paper's two redundancy demonstrations, reduced horizons
    from probeinv.signals import build_two_qubit_model

    q1 = [np.sqrt(2 / 3), np.sqrt(1 / 3)]
    q2 = [np.sqrt(3) / 2, 0.5]
    state = pure_state(np.kron(q1, q2))
    sig = DistortedStep(units.from_mhz(10.0), 0.0, 20.0)
    cfg = IntegratorConfig(dt=0.05, sample_every=1)
    icfg = InversionConfig(singular_threshold=2e-3)

    model2 = build_two_qubit_model(W0, W0, None, [tensor(Y, I2), tensor(I2, X)], state)
    _, rec = simulate(model2, [sig], 70.0, cfg)
    single_model = model2.with_observables([tensor(Y, I2)])
    rep_single = invert(
        single_model,
        transform_observables(single_model),
        MeasurementRecord(rec.t0, rec.dt, rec.values[:, :1]),
        icfg,
    )
    rep_both = invert(model2, transform_observables(model2), rec, icfg)
    assert rep_both.window_measure() <= rep_single.window_measure()

    qp1 = [np.sqrt(2 / 3), np.sqrt(1 / 3) * np.exp(1j * np.pi / 4)]
    qp2 = [np.sqrt(3) / 2, 0.5 * np.exp(-1j * np.pi / 3)]
    obs5 = [tensor(X, I2), tensor(Y, I2), tensor(I2, X), tensor(I2, Y), tensor(Z, I2)]
    model5 = build_two_qubit_model(None, None, None, obs5, pure_state(np.kron(qp1, qp2)))
    truth = [
        DistortedStep(units.from_mhz(10.0), 0.0, 15.0),
        DistortedStep(units.from_mhz(10.0), 0.0, 25.0),
        DistortedStep(units.from_mhz(10.0), 0.0, 20.0),
    ]
    _, rec5 = simulate(model5, truth, 80.0, cfg)
    model3 = model5.with_observables(obs5[:3])
    rep3 = invert(
        model3,
        transform_observables(model3),
        MeasurementRecord(rec5.t0, rec5.dt, rec5.values[:, :3]),
        icfg,
    )
    rep5 = invert(model5, transform_observables(model5), rec5, icfg)
    assert rep5.window_measure() <= rep3.window_measure()
    assert rep3.flags().any()
    assert not rep5.flags().any()


def test_measurement_noise_dominates_at_equal_variance():
    # equal-variance high-band comparison plus unbounded growth in v
    model = phase_probe([1, 1j])
    sig = Sinusoid(0.3, 1.0)
    T = 2 * np.pi
    cfg = IntegratorConfig(dt=0.0025, sample_every=5)
    verdict = transform_observables(model)
    icfg = InversionConfig(singular_threshold=2e-3)

    def err_measurement(variance, seed):
        _, rec = simulate(model, [sig], T, cfg)
        rec = inject_noise(rec, NoiseSpec("measurement", "high", variance, seed, fundamental=1.0))
        rep = invert(model, verdict, rec, icfg)
        truth = eval_signal(sig, rep.reconstructed.times)
        return rel_l2(rep.reconstructed.values[:, 0], truth)

    def err_evolution(variance, seed):
        inputs = inject_noise([sig], NoiseSpec("evolution", "high", variance, seed, fundamental=1.0))
        _, rec = simulate(model, inputs, T, cfg)
        rep = invert(model, verdict, rec, icfg)
        truth = eval_signal(inputs[0], rep.reconstructed.times)
        return rel_l2(rep.reconstructed.values[:, 0], truth)

    v = 1e-4
    med_m = np.median([err_measurement(v, 100 + s) for s in range(5)])
    med_e = np.median([err_evolution(v, 100 + s) for s in range(5)])
    assert med_m > med_e

    errs = [np.median([err_measurement(var, 300 + s) for s in range(5)]) for var in (1e-8, 1e-6, 1e-4)]
    assert errs[0] < errs[1] < errs[2]
    assert errs[2] > 10 * errs[0]


def test_invert_validates():
    model = phase_probe([1, 1j])
    cfg = IntegratorConfig(dt=0.01, sample_every=1)
    _, rec = simulate(model, [Sinusoid(0.3, 1.0)], 2.0, cfg)
    bad = MeasurementRecord(rec.t0, rec.dt, np.column_stack([rec.values, rec.values]))
    from probeinv.inversion import InversionError

    with pytest.raises(InversionError, match="channels"):
        invert(model, transform_observables(model), bad, InversionConfig())
    with pytest.raises(InversionError, match="not invertible"):
        bad_model = phase_probe([1, 1j]).with_observables([Z])
        invert(bad_model, transform_observables(bad_model), rec, InversionConfig())


# --- Ramsey direct readout ---


def test_ramsey_branches_recover_signed_drive():
    model = phase_probe([1, 1])
    cfg = IntegratorConfig(dt=0.005, sample_every=1)
    _, rec = simulate(model, [Sinusoid(1.0, 1.0)], 6.0, cfg)
    result = ramsey_direct(rec)
    t = result.branches[0].times
    truth = np.sin(t)
    assert rel_l2(result.branches[0].values[:, 0], truth) <= 1e-3
    assert rel_l2(result.branches[1].values[:, 0], -truth) <= 1e-3
    assert np.max(np.abs(result.branches[0].values - result.branches[1].values)) > 1.0


def test_ramsey_zero_drive_branches_coincide():
    model = phase_probe([1, 1])
    cfg = IntegratorConfig(dt=0.01, sample_every=1)
    _, rec = simulate(model, [Constant(0.0)], 3.0, cfg)
    result = ramsey_direct(rec)
    assert np.allclose(result.branches[0].values, 0.0, atol=1e-9)
    assert np.allclose(result.branches[1].values, 0.0, atol=1e-9)
    # y == 1 everywhere: every sample sits at the branch point
    assert len(result.branch_point_times) == rec.values.shape[0]


def test_ramsey_requires_scalar_record():
    rec = MeasurementRecord(0.0, 0.1, np.zeros((10, 2)))
    with pytest.raises(ValueError, match="scalar"):
        ramsey_direct(rec)


# --- serialization ---


def test_report_serialization(tmp_path):
    model = phase_probe([1, 1j])
    cfg = IntegratorConfig(dt=0.005, sample_every=1)
    _, rec = simulate(model, [Sinusoid(0.3, 1.0)], 3.0, cfg)
    report = invert(model, transform_observables(model), rec, InversionConfig(singular_threshold=2e-3))
    csv_path = tmp_path / "report.csv"
    write_report_csv(report, csv_path)
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "t,u1_hat,smin,smax,flag"
    assert len(lines) == 1 + rec.values.shape[0]
    json_path = tmp_path / "windows.json"
    write_windows_json(report, json_path)
    import json as json_mod

    payload = json_mod.loads(json_path.read_text())
    assert payload["hold_policy"] == "hold_last"
    assert payload["singular_windows"] == [list(w) for w in report.singular_windows]
