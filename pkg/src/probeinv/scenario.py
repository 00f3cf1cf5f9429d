"""Declarative scenario files: schema, validation, and model assembly.

A scenario is one YAML document with explicit units on every physical
quantity. Frequencies are given in MHz and converted to the internal
angular rad/ns convention on load; times are ns. The unit convention is
the single biggest source of ambiguity in this problem class, so it is
restated in every file rather than assumed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import units
from .baseline import Backtracking, FixedStep, LsqConfig
from .forward import IntegratorConfig, NoiseSpec
from .inversion import InversionConfig, SavitzkyGolay, ThreePoint
from .operators import hamiltonian_term, lindblad_term, on_qubit, pauli, pure_state
from .signals import Constant, DistortedStep, ProbeModel, Sinusoid, build_two_qubit_model


class ScenarioError(ValueError):
    """Validation failure; carries the offending field path."""

    def __init__(self, path: str, message: str):
        self.field_path = path
        super().__init__(f"{path}: {message}")


VALID_OUTPUTS = ("verdict", "forward_record", "inversion_report", "ramsey_branches", "lsq_result")

_SINGLE_PAULI = {"sx": "X", "sy": "Y", "sz": "Z"}


def parse_observable(name: str, n_qubits: int) -> np.ndarray:
    """Observable names: sx/sy/sz (one qubit) or products like s1y, s1z*s2x (two qubits)."""
    name = name.strip().lower()
    if n_qubits == 1:
        if name not in _SINGLE_PAULI:
            raise ValueError(f"unknown single-qubit observable {name!r}")
        return pauli(_SINGLE_PAULI[name])
    out = np.eye(2**n_qubits, dtype=complex)
    for factor in name.split("*"):
        factor = factor.strip()
        if len(factor) != 3 or factor[0] != "s" or not factor[1].isdigit() or factor[2] not in "xyz":
            raise ValueError(f"malformed observable factor {factor!r} (expected e.g. s1y)")
        idx = int(factor[1]) - 1
        if not 0 <= idx < n_qubits:
            raise ValueError(f"qubit index out of range in {factor!r}")
        out = out @ on_qubit(pauli(factor[2].upper()), idx, n_qubits)
    return out


def _require(mapping, key, path, kind=None):
    if key not in mapping:
        raise ScenarioError(f"{path}.{key}", "missing required field")
    value = mapping[key]
    if kind is not None and not isinstance(value, kind):
        raise ScenarioError(f"{path}.{key}", f"expected {kind.__name__}, got {type(value).__name__}")
    return value


def _quantity(node, path, expect_unit):
    """A physical quantity is a {value, unit} pair; the unit must be explicit."""
    if not isinstance(node, dict):
        raise ScenarioError(path, f"expected {{value, unit}} mapping, got {type(node).__name__}")
    value = _require(node, "value", path)
    unit = _require(node, "unit", path)
    if unit != expect_unit:
        raise ScenarioError(f"{path}.unit", f"expected {expect_unit!r}, got {unit!r}")
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ScenarioError(f"{path}.value", f"not a number: {value!r}") from None


def _frequency_to_internal(node, path):
    """Coupling amplitudes may be quoted in MHz (converted) or rad/ns (taken as is)."""
    if not isinstance(node, dict):
        raise ScenarioError(path, f"expected {{value, unit}} mapping, got {type(node).__name__}")
    unit = _require(node, "unit", path)
    if unit == "MHz":
        return units.from_mhz(_quantity(node, path, "MHz"))
    if unit == "rad/ns":
        return _quantity(node, path, "rad/ns")
    raise ScenarioError(f"{path}.unit", f"expected 'MHz' or 'rad/ns', got {unit!r}")


def _mhz_to_internal(node, path):
    return _frequency_to_internal(node, path)


def parse_signal(node, path) -> object:
    kind = _require(node, "kind", path, str)
    if kind == "constant":
        return Constant(_frequency_to_internal(_require(node, "amplitude", path), f"{path}.amplitude"))
    if kind == "sinusoid":
        amp = _frequency_to_internal(_require(node, "amplitude", path), f"{path}.amplitude")
        freq = _quantity(_require(node, "frequency", path), f"{path}.frequency", "rad/ns")
        phase = float(node.get("phase", 0.0))
        return Sinusoid(amp, freq, phase)
    if kind == "distorted_step":
        amp = _frequency_to_internal(_require(node, "amplitude", path), f"{path}.amplitude")
        ts = _quantity(_require(node, "step_time", path), f"{path}.step_time", "ns")
        tau = _quantity(_require(node, "rise_tau", path), f"{path}.rise_tau", "ns")
        return DistortedStep(amp, ts, tau)
    raise ScenarioError(f"{path}.kind", f"unknown signal kind {kind!r}")


def _parse_amplitude_pair(node, path):
    if not (isinstance(node, list) and len(node) == 2):
        raise ScenarioError(path, "expected [re, im] or [c0, c1] amplitude list")
    def as_complex(x, p):
        if isinstance(x, (int, float)):
            return complex(x)
        if isinstance(x, list) and len(x) == 2:
            return complex(float(x[0]), float(x[1]))
        raise ScenarioError(p, f"cannot read amplitude {x!r}")
    return [as_complex(node[0], f"{path}[0]"), as_complex(node[1], f"{path}[1]")]


@dataclass(frozen=True)
class ObservableSet:
    name: str
    names: tuple
    matrices: tuple


@dataclass(frozen=True)
class Scenario:
    """A fully validated scenario: model, truth signals, configs, requested outputs."""

    name: str
    description: str
    model: ProbeModel
    n_qubits: int
    truth: tuple  # SignalSpec per control channel
    observable_sets: tuple  # ObservableSet; the model carries their union
    horizon: float
    integrator: IntegratorConfig
    inversion: InversionConfig
    noise: NoiseSpec | None
    lsq: LsqConfig | None
    lsq_guesses: tuple  # (name, per-channel guess values in rad/ns)
    outputs: tuple
    seed: int
    compare_negated_input: bool
    raw: dict = field(repr=False, default_factory=dict)


def _parse_model(node, path):
    kind = _require(node, "kind", path, str)
    state_node = _require(node, "initial_state", path)
    if kind == "single_qubit":
        amps = _parse_amplitude_pair(
            _require(state_node, "qubit", f"{path}.initial_state"), f"{path}.initial_state.qubit"
        )
        state = pure_state(amps)
        drift = []
        bias = node.get("bias_x")
        if bias is not None:
            drift.append(hamiltonian_term(_mhz_to_internal(bias, f"{path}.bias_x") * pauli("X")))
        rate_node = node.get("dephasing_rate")
        if rate_node is not None:
            rate = _quantity(rate_node, f"{path}.dephasing_rate", "1/ns")
            if rate < 0:
                raise ScenarioError(f"{path}.dephasing_rate", "must be nonnegative")
            if rate > 0:
                drift.append(lindblad_term(np.sqrt(rate) * pauli("Z")))
        controls = (hamiltonian_term(pauli("Z")),)
        return kind, 1, tuple(drift), controls, state
    if kind == "two_qubit_exchange":
        q1 = _parse_amplitude_pair(_require(state_node, "qubit1", f"{path}.initial_state"), f"{path}.initial_state.qubit1")
        q2 = _parse_amplitude_pair(_require(state_node, "qubit2", f"{path}.initial_state"), f"{path}.initial_state.qubit2")
        state = pure_state(np.kron(q1, q2))
        coeffs = {}
        for key in ("qubit1_frequency", "qubit2_frequency", "coupling"):
            sub = _require(node, key, path)
            known = _require(sub, "known", f"{path}.{key}")
            if known:
                coeffs[key] = _mhz_to_internal(_require(sub, "value", f"{path}.{key}"), f"{path}.{key}.value")
            else:
                coeffs[key] = None
        return kind, 2, coeffs, None, state
    raise ScenarioError(f"{path}.kind", f"unknown model kind {kind!r}")


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ScenarioError(str(path), f"YAML parse error: {exc}") from exc
    if not isinstance(raw, dict):
        raise ScenarioError(str(path), "scenario file must hold a mapping")
    return scenario_from_dict(raw)


def scenario_from_dict(raw: dict) -> Scenario:
    name = _require(raw, "name", "scenario", str)
    description = raw.get("description", "")

    units_node = _require(raw, "units", "scenario")
    if _require(units_node, "frequency", "scenario.units") != "MHz":
        raise ScenarioError("scenario.units.frequency", "this schema quotes frequencies in MHz")
    if _require(units_node, "time", "scenario.units") != "ns":
        raise ScenarioError("scenario.units.time", "this schema quotes times in ns")

    model_node = _require(raw, "model", "scenario")
    kind, n_qubits, model_info, single_controls, state = _parse_model(model_node, "scenario.model")

    obs_sets = []
    if "observable_sets" in raw:
        for i, sub in enumerate(raw["observable_sets"]):
            set_name = _require(sub, "name", f"scenario.observable_sets[{i}]", str)
            names = _require(sub, "observables", f"scenario.observable_sets[{i}]", list)
            obs_sets.append((set_name, names))
    else:
        names = _require(raw, "observables", "scenario", list)
        obs_sets.append(("default", names))
    parsed_sets = []
    union_names = []
    for set_name, names in obs_sets:
        mats = []
        for j, obs_name in enumerate(names):
            try:
                mats.append(parse_observable(obs_name, n_qubits))
            except ValueError as exc:
                raise ScenarioError(f"scenario observables[{set_name}][{j}]", str(exc)) from exc
            if obs_name not in union_names:
                union_names.append(obs_name)
        parsed_sets.append(ObservableSet(set_name, tuple(names), tuple(mats)))
    union_mats = tuple(parse_observable(n, n_qubits) for n in union_names)

    truth_node = _require(raw, "truth", "scenario")
    if kind == "single_qubit":
        truth = (parse_signal(_require(truth_node, "drive", "scenario.truth"), "scenario.truth.drive"),)
        model = ProbeModel(model_info, single_controls, union_mats, state)
    else:
        coeffs = model_info
        unknown_keys = [k for k, v in (("qubit1_frequency", coeffs["qubit1_frequency"]),
                                       ("qubit2_frequency", coeffs["qubit2_frequency"]),
                                       ("coupling", coeffs["coupling"])) if v is None]
        if not unknown_keys:
            raise ScenarioError("scenario.model", "all coefficients known; nothing to identify")
        truth = []
        for key in unknown_keys:
            sig_key = {"qubit1_frequency": "qubit1_frequency", "qubit2_frequency": "qubit2_frequency", "coupling": "coupling"}[key]
            truth.append(parse_signal(_require(truth_node, sig_key, "scenario.truth"), f"scenario.truth.{sig_key}"))
        truth = tuple(truth)
        model = build_two_qubit_model(
            coeffs["qubit1_frequency"], coeffs["qubit2_frequency"], coeffs["coupling"],
            union_mats, state,
        )

    m = model.n_inputs
    for oset in parsed_sets:
        if len(oset.names) < m:
            raise ScenarioError(
                f"scenario observables[{oset.name}]",
                f"under-instrumented: {len(oset.names)} measurements for {m} unknown inputs; "
                "the number of measurements must not be less than the number of inputs",
            )

    horizon = _quantity(_require(raw, "horizon", "scenario"), "scenario.horizon", "ns")
    if horizon <= 0:
        raise ScenarioError("scenario.horizon.value", "must be positive")

    integ_node = raw.get("integrator", {})
    try:
        integrator = IntegratorConfig(
            dt=float(integ_node.get("dt", 0.1)),
            sample_every=int(integ_node.get("sample_every", 5)),
        )
    except ValueError as exc:
        raise ScenarioError("scenario.integrator", str(exc)) from exc

    inv_node = raw.get("inversion", {})
    scheme_name = inv_node.get("derivative_scheme", "three_point")
    if scheme_name == "three_point":
        scheme = ThreePoint()
    elif scheme_name == "savitzky_golay":
        try:
            scheme = SavitzkyGolay(int(inv_node.get("window", 9)), int(inv_node.get("degree", 5)))
        except ValueError as exc:
            raise ScenarioError("scenario.inversion", str(exc)) from exc
    else:
        raise ScenarioError("scenario.inversion.derivative_scheme", f"unknown scheme {scheme_name!r}")
    try:
        inversion = InversionConfig(
            derivative_scheme=scheme,
            singular_threshold=float(inv_node.get("singular_threshold", 1e-3)),
            hold_policy=str(inv_node.get("hold_policy", "hold_last")),
        )
    except ValueError as exc:
        raise ScenarioError("scenario.inversion", str(exc)) from exc

    seed = int(raw.get("seed", 0))

    noise = None
    if "noise" in raw and raw["noise"] is not None:
        nnode = raw["noise"]
        try:
            noise = NoiseSpec(
                target=_require(nnode, "target", "scenario.noise", str),
                band=_require(nnode, "band", "scenario.noise", str),
                variance=float(_require(nnode, "variance", "scenario.noise")),
                seed=int(nnode.get("seed", seed)),
                fundamental=_quantity(
                    _require(nnode, "fundamental", "scenario.noise"), "scenario.noise.fundamental", "rad/ns"
                ),
                channel=int(nnode.get("channel", 0)),
            )
        except ValueError as exc:
            raise ScenarioError("scenario.noise", str(exc)) from exc

    lsq = None
    lsq_guesses = ()
    if "lsq" in raw and raw["lsq"] is not None:
        lnode = raw["lsq"]
        guesses = []
        for i, gnode in enumerate(_require(lnode, "guesses", "scenario.lsq", list)):
            gname = _require(gnode, "name", f"scenario.lsq.guesses[{i}]", str)
            values = _require(gnode, "values", f"scenario.lsq.guesses[{i}]", list)
            if len(values) != m:
                raise ScenarioError(
                    f"scenario.lsq.guesses[{i}].values", f"need {m} per-channel guesses, got {len(values)}"
                )
            parsed = tuple(_mhz_to_internal(v, f"scenario.lsq.guesses[{i}].values[{j}]") for j, v in enumerate(values))
            guesses.append((gname, parsed))
        step_node = lnode.get("step_rule", "backtracking")
        if step_node == "backtracking":
            step = Backtracking()
        elif isinstance(step_node, dict) and "fixed" in step_node:
            step = FixedStep(float(step_node["fixed"]))
        else:
            raise ScenarioError("scenario.lsq.step_rule", f"unknown step rule {step_node!r}")
        try:
            lsq = LsqConfig(
                n_bins=int(lnode.get("n_bins", 50)),
                initial_guess=guesses[0][1],
                max_iters=int(lnode.get("max_iters", 200)),
                step_rule=step,
                tol=float(lnode.get("tol", 0.0)),
            )
        except ValueError as exc:
            raise ScenarioError("scenario.lsq", str(exc)) from exc
        lsq_guesses = tuple(guesses)

    outputs = tuple(_require(raw, "outputs", "scenario", list))
    for out in outputs:
        if out not in VALID_OUTPUTS:
            raise ScenarioError("scenario.outputs", f"unknown output {out!r}; valid: {VALID_OUTPUTS}")
    if "lsq_result" in outputs and lsq is None:
        raise ScenarioError("scenario.outputs", "lsq_result requested but no lsq section given")
    if "ramsey_branches" in outputs and kind != "single_qubit":
        raise ScenarioError("scenario.outputs", "ramsey_branches applies to single-qubit scenarios only")

    return Scenario(
        name=name,
        description=description,
        model=model,
        n_qubits=n_qubits,
        truth=truth,
        observable_sets=tuple(parsed_sets),
        horizon=horizon,
        integrator=integrator,
        inversion=inversion,
        noise=noise,
        lsq=lsq,
        lsq_guesses=lsq_guesses,
        outputs=outputs,
        seed=seed,
        compare_negated_input=bool(raw.get("compare_negated_input", False)),
        raw=raw,
    )


def validate_scenario(path) -> str:
    """Full static check without execution; returns a human-readable report."""
    scenario = load_scenario(path)
    lines = [
        f"scenario: {scenario.name}",
        f"model: {scenario.n_qubits} qubit(s), {scenario.model.n_inputs} unknown input(s), "
        f"{scenario.model.n_outputs} observable(s) in the union",
        f"observable sets: {', '.join(f'{s.name}({len(s.names)})' for s in scenario.observable_sets)}",
        f"horizon: {scenario.horizon} ns, dt {scenario.integrator.dt} ns, "
        f"sample every {scenario.integrator.sample_every}",
        f"outputs: {', '.join(scenario.outputs)}",
        f"seed: {scenario.seed}",
        "ok",
    ]
    return "\n".join(lines)
