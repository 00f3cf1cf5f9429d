"""Scenario execution: pipeline stages, artifact files, and the run manifest."""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .baseline import LsqConfig, lsq_identify, record_energy
from .forward import inject_noise, simulate, write_record_csv
from .inversion import invert, ramsey_direct, write_report_csv, write_windows_json
from .invertibility import transform_observables, write_verdict_json
from .scenario import Scenario, load_scenario
from .signals import MeasurementRecord, Sinusoid

OUTPUT_ROOT_ENV = "PROBEINV_OUTPUT_ROOT"


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        super().__init__(f"stage {stage!r} failed: {cause}")


def default_output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "probeinv_out"))


def _canonical_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def _file_hash(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _negate_signal(spec):
    if isinstance(spec, Sinusoid):
        return replace(spec, amplitude=-spec.amplitude)
    raise ValueError("negated-input comparison is defined for sinusoid truth signals")


def _subrecord(record: MeasurementRecord, union_names, subset_names) -> MeasurementRecord:
    idx = [union_names.index(n) for n in subset_names]
    return MeasurementRecord(record.t0, record.dt, record.values[:, idx])


def run_scenario(path, out_root=None, seed=None) -> Path:
    """Execute one scenario file; returns the artifact directory.

    Stages run in order: verdict, forward simulation, noise injection,
    inversion / Ramsey branches / least-squares baseline, each gated on the
    scenario's requested outputs. Every artifact lands in a directory named
    after the scenario together with a manifest carrying the config hash,
    the seed, and a content hash per file.
    """
    scenario = load_scenario(path) if not isinstance(path, Scenario) else path
    if seed is not None:
        noise = replace(scenario.noise, seed=int(seed)) if scenario.noise else None
        scenario = replace(scenario, seed=int(seed), noise=noise)
    out_root = Path(out_root) if out_root else default_output_root()
    out_dir = out_root / scenario.name
    out_dir.mkdir(parents=True, exist_ok=True)

    artifacts: list[Path] = []
    union_names = []
    for oset in scenario.observable_sets:
        for n in oset.names:
            if n not in union_names:
                union_names.append(n)

    # --- verdicts, one per observable set
    verdicts = {}
    if "verdict" in scenario.outputs or "inversion_report" in scenario.outputs:
        for oset in scenario.observable_sets:
            try:
                sub_model = scenario.model.with_observables(oset.matrices)
                verdicts[oset.name] = (sub_model, transform_observables(sub_model))
            except Exception as exc:
                raise StageError("verdict", exc) from exc
            if "verdict" in scenario.outputs:
                vpath = out_dir / _set_file("verdict", oset.name, "json", scenario)
                write_verdict_json(verdicts[oset.name][1], vpath)
                artifacts.append(vpath)

    # --- forward simulation with the union of observables
    try:
        inputs = list(scenario.truth)
        if scenario.noise and scenario.noise.target == "evolution":
            inputs = inject_noise(inputs, scenario.noise)
        _, record = simulate(scenario.model, inputs, scenario.horizon, scenario.integrator)
        if scenario.noise and scenario.noise.target == "measurement":
            record = inject_noise(record, scenario.noise)
    except Exception as exc:
        raise StageError("forward", exc) from exc

    if "forward_record" in scenario.outputs:
        rpath = out_dir / "forward_record.csv"
        write_record_csv(record, rpath)
        artifacts.append(rpath)
        # plot-ready reference: the declared truth signals on the record grid
        tpath = out_dir / "truth_signals.csv"
        with open(tpath, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"u{k + 1}" for k in range(len(scenario.truth))])
            tgrid = record.times
            cols = [eval_signal(sig, tgrid) for sig in scenario.truth]
            for i, t in enumerate(tgrid):
                writer.writerow([f"{t:.12g}"] + [f"{c[i]:.12g}" for c in cols])
        artifacts.append(tpath)
        if scenario.compare_negated_input:
            try:
                neg_inputs = [_negate_signal(s) for s in scenario.truth]
                _, neg_record = simulate(scenario.model, neg_inputs, scenario.horizon, scenario.integrator)
            except Exception as exc:
                raise StageError("forward", exc) from exc
            npath = out_dir / "forward_record_negated_input.csv"
            write_record_csv(neg_record, npath)
            artifacts.append(npath)

    # --- Ramsey direct branches
    if "ramsey_branches" in scenario.outputs:
        try:
            branches = ramsey_direct(record, scenario.inversion)
        except Exception as exc:
            raise StageError("ramsey", exc) from exc
        bpath = out_dir / "ramsey_branches.csv"
        with open(bpath, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "u_branch_pos", "u_branch_neg"])
            for t, up, un in zip(
                branches.branches[0].times,
                branches.branches[0].values[:, 0],
                branches.branches[1].values[:, 0],
            ):
                writer.writerow([f"{t:.12g}", f"{up:.12g}", f"{un:.12g}"])
        artifacts.append(bpath)

    # --- inversion per observable set
    if "inversion_report" in scenario.outputs:
        for oset in scenario.observable_sets:
            sub_model, verdict = verdicts[oset.name]
            if not verdict.invertible:
                raise StageError(
                    "invert", RuntimeError(f"observable set {oset.name!r} is not invertible")
                )
            try:
                sub_record = _subrecord(record, union_names, list(oset.names))
                report = invert(sub_model, verdict, sub_record, scenario.inversion)
            except Exception as exc:
                raise StageError("invert", exc) from exc
            cpath = out_dir / _set_file("inversion_report", oset.name, "csv", scenario)
            wpath = out_dir / _set_file("singular_windows", oset.name, "json", scenario)
            write_report_csv(report, cpath)
            write_windows_json(report, wpath)
            artifacts.extend([cpath, wpath])

    # --- least-squares baseline per configured guess
    if "lsq_result" in scenario.outputs:
        for gname, guess in scenario.lsq_guesses:
            cfg = replace(scenario.lsq, initial_guess=guess)
            try:
                traces, history = lsq_identify(scenario.model, record, cfg, scenario.integrator)
            except Exception as exc:
                raise StageError("lsq", exc) from exc
            hpath = out_dir / f"lsq_history_{gname}.csv"
            with open(hpath, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["iter", "cost"])
                for i, c in enumerate(history):
                    writer.writerow([i, f"{c:.12g}"])
            spath = out_dir / f"lsq_signals_{gname}.csv"
            with open(spath, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["t"] + [f"u{k + 1}" for k in range(len(traces))])
                for i, t in enumerate(traces[0].times):
                    writer.writerow([f"{t:.12g}"] + [f"{tr.values[i, 0]:.12g}" for tr in traces])
            artifacts.extend([hpath, spath])

    manifest = {
        "scenario": scenario.name,
        "config_sha256": _canonical_hash(scenario.raw),
        "seed": scenario.seed,
        "package_version": __version__,
        "record_energy": record_energy(record),
        "artifacts": {p.name: _file_hash(p) for p in artifacts},
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out_dir


def _set_file(prefix: str, set_name: str, ext: str, scenario: Scenario) -> str:
    if len(scenario.observable_sets) == 1:
        return f"{prefix}.{ext}"
    return f"{prefix}_{set_name}.{ext}"
