"""Command-line front end: validate a JSON scenario, run it, write CSV and JSON artifacts.

Exit codes: 0 all checks pass, 1 a check failed, 2 the scenario is invalid,
3 the run hit a numerical failure (node, step limit, sampler breach, ...).
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import os
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .canonical import BOX_L, BOX_T
from .classical import ClassicalState, classical_trajectory, delta_equivariance_check, nonrel_limit_check
from .dynamics import IntegratorConfig, integrate, proper_time_audit, boost_covariance_check, config_dict
from .ensemble import EnsembleSpec, equivariance_test, sample
from .errors import BohmError, ScenarioError
from .measurement import (
    PointerSpec,
    build_correlation_state,
    build_post_measurement,
    correlation_scenario,
    frame_mix_check,
    run_chsh,
    run_correlation,
    run_measurement,
    two_branch_scenario,
)
from .minkowski import Boost
from .wavefunction import ManyBodyState, ParticleSpec

EXIT_OK, EXIT_FAILED, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2, 3
KINDS = ("simulate", "equivariance", "measure", "correlate", "boost_check", "classical_limit")


def load_schema() -> dict:
    return json.loads(resources.files("relbohm").joinpath("scenario_schema.json").read_text(encoding="utf-8"))


def _path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def load_scenario(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as e:
        raise ScenarioError(str(e), "<file>") from None
    except json.JSONDecodeError as e:
        raise ScenarioError(f"not valid JSON ({e.msg} at line {e.lineno})", "<file>") from None


def scenario_hash(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


# ---------------------------------------------------------------------------
# scenario -> domain objects
# ---------------------------------------------------------------------------


def _complex(v) -> complex:
    return complex(v["re"], v.get("im", 0.0)) if isinstance(v, dict) else complex(v)


def _tensor(v):
    return [_tensor(x) for x in v] if isinstance(v, list) else _complex(v)


def build_state(sd: dict, field: str = "state") -> ManyBodyState:
    L, T = float(sd["L"]), float(sd["T"])
    particles, p3s = [], []
    for i, p in enumerate(sd["particles"]):
        particles.append(ParticleSpec(float(p["mass"])))
        if "k" in p:
            p3s.append(2 * np.pi * np.asarray(p["k"], dtype=float) / L)
        else:
            p3s.append(np.asarray(p["p3"], dtype=float))
    amps = np.array(_tensor(sd["amplitudes"]), dtype=complex)
    shape = tuple(len(p) for p in p3s)
    if amps.shape != shape:
        raise ScenarioError(f"amplitude tensor has shape {amps.shape}, the modes need {shape}", f"{field}.amplitudes")
    try:
        return ManyBodyState.from_modes(particles, p3s, amps, L, T, sd.get("normalize", True))
    except ValueError as e:
        raise ScenarioError(str(e), field) from None


def build_config(doc: dict, **defaults) -> IntegratorConfig:
    kw = dict(defaults)
    kw.update(doc.get("integrator", {}))
    return IntegratorConfig(**kw)


def _events(v, n: int, field: str) -> np.ndarray:
    x = np.asarray(v, dtype=float)
    if x.shape != (n, 4):
        raise ScenarioError(f"need {n} events (one per massive particle), got {len(x)}", field)
    return x


def _pointer(d: dict) -> PointerSpec:
    return PointerSpec(**d.get("pointer", {}))


def _measure_scenario(m: dict, seed: int, workers: int):
    c = [_complex(v) for v in m["amplitudes"]]
    L = float(m.get("L", 16.0))
    centers = m.get("centers", list(np.linspace(0.25 * L, 0.75 * L, len(c))))
    if len(centers) != len(c):
        raise ScenarioError(f"{len(centers)} centers for {len(c)} branches", "measure.centers")
    try:
        return two_branch_scenario(
            c, centers, L=L, T=float(m.get("T", 20.0)), system_mass=float(m.get("system_mass", 1.0)),
            pointer=_pointer(m), count=m.get("count", 10_000), seed=seed, s_final=m.get("s_final", 1.0),
            step=m.get("step", 0.05), workers=workers)
    except ValueError as e:
        raise ScenarioError(str(e), "measure.amplitudes") from None


def _correlate_scenario(cd: dict, seed: int, workers: int):
    c = np.array(_tensor(cd.get("amplitudes", [[0.5**0.5, 0.0], [0.0, 0.5**0.5]])), dtype=complex)
    if c.ndim != 2:
        raise ScenarioError("amplitudes must be a matrix", "correlate.amplitudes")
    L = float(cd.get("L", 16.0))
    centers = cd.get("centers", [list(np.linspace(0.25 * L, 0.75 * L, c.shape[k])) for k in (0, 1)])
    for k in (0, 1):
        if len(centers[k]) != c.shape[k]:
            raise ScenarioError(f"side {k} has {c.shape[k]} branches but {len(centers[k])} centers",
                                f"correlate.centers[{k}]")
    try:
        return correlation_scenario(
            c, tuple(tuple(x) for x in centers), L=L, T=float(cd.get("T", 20.0)),
            system_mass=float(cd.get("system_mass", 1.0)), pointer=_pointer(cd), count=cd.get("count", 10_000),
            seed=seed, s_final=cd.get("s_final", 0.5), step=cd.get("step", 0.05), workers=workers)
    except ValueError as e:
        raise ScenarioError(str(e), "correlate.amplitudes") from None


class Plan:
    """A validated scenario: the parsed document plus its built domain objects."""

    def __init__(self, doc: dict, seed: int, workers: int):
        self.doc = doc
        self.kind = doc["kind"]
        self.seed = seed
        self.workers = workers
        self.state = build_state(doc["state"]) if "state" in doc else None
        self.objects: dict = {}
        getattr(self, f"_prepare_{self.kind}")()

    def _n_massive(self) -> int:
        return len(self.state.massive)

    def _prepare_simulate(self):
        s = self.doc["simulate"]
        self.objects["initial"] = _events(s["initial"], self._n_massive(), "simulate.initial")
        if "expect_final" in s:
            self.objects["expect_final"] = _events(s["expect_final"], self._n_massive(), "simulate.expect_final")
        self.objects["cfg"] = _config(self.doc)

    def _prepare_equivariance(self):
        e = self.doc["equivariance"]
        kw = dict(seed=self.seed, sampler=e.get("sampler", "rejection"), workers=self.workers)
        if "region" in e:
            n = self._n_massive()
            lo = _events(e["region"]["lo"], n, "equivariance.region.lo")
            hi = _events(e["region"]["hi"], n, "equivariance.region.hi")
            try:
                spec = EnsembleSpec(e.get("count", 10_000), lo, hi, **kw)
            except ValueError as err:
                raise ScenarioError(str(err), "equivariance.region") from None
        else:
            spec = EnsembleSpec.full_box(self.state, e.get("count", 10_000), **kw)
        self.objects["spec"] = spec
        self.objects["cfg"] = _config(self.doc, step=e.get("step", 0.01))

    def _prepare_measure(self):
        sc = _measure_scenario(self.doc["measure"], self.seed, self.workers)
        self.objects["scenario"] = sc
        try:
            self.objects["state"] = build_post_measurement(sc)
        except BohmError as e:
            raise ScenarioError(str(e), "measure.centers") from None

    def _prepare_correlate(self):
        sc = _correlate_scenario(self.doc["correlate"], self.seed, self.workers)
        fm = self.doc["correlate"].get("frame_mix")
        if fm is not None:
            try:
                sc = replace(sc, boosts=tuple(None if b is None else Boost(b) for b in fm))
            except ValueError as e:
                raise ScenarioError(str(e), "correlate.frame_mix") from None
        self.objects["scenario"] = sc
        try:
            self.objects["state"] = build_correlation_state(sc)
        except BohmError as e:
            raise ScenarioError(str(e), "correlate.centers") from None

    def _prepare_boost_check(self):
        b = self.doc["boost_check"]
        self.objects["initial"] = _events(b["initial"], self._n_massive(), "boost_check.initial")
        try:
            self.objects["boost"] = Boost(b["beta"])
        except ValueError as e:
            raise ScenarioError(str(e), "boost_check.beta") from None
        self.objects["cfg"] = _config(self.doc)

    def _prepare_classical_limit(self):
        c = self.doc["classical_limit"]
        if len(c["masses"]) != len(c["p3"]):
            raise ScenarioError(f"{len(c['p3'])} momenta for {len(c['masses'])} masses", "classical_limit.p3")
        try:
            cs = ClassicalState.from_p3(c["masses"], c["p3"])
        except ValueError as e:
            raise ScenarioError(str(e), "classical_limit.p3") from None
        self.objects["cstate"] = cs
        self.objects["initial"] = _events(c["initial"], cs.n, "classical_limit.initial")
        p3s = [np.atleast_2d(p) for p in np.asarray(c["p3"], dtype=float)]
        amps = np.ones((1,) * cs.n)
        self.objects["quantum"] = ManyBodyState.from_modes(
            [ParticleSpec(m) for m in cs.masses], p3s, amps, BOX_L, BOX_T)
        self.objects["cfg"] = _config(self.doc)


def _config(doc: dict, **defaults) -> IntegratorConfig:
    try:
        return build_config(doc, **defaults)
    except (TypeError, ValueError) as e:
        raise ScenarioError(str(e), "integrator") from None


def validate(doc: dict, seed_override: int | None = None, workers: int = 1) -> Plan:
    """Schema check, then physical checks while building the domain objects."""
    validator = jsonschema.Draft202012Validator(load_schema())
    err = jsonschema.exceptions.best_match(validator.iter_errors(doc))
    if err is not None:
        raise ScenarioError(err.message, _path(err.absolute_path))
    seed = doc.get("seed", 1) if seed_override is None else seed_override
    return Plan(doc, seed, workers)


# ---------------------------------------------------------------------------
# runners
# ---------------------------------------------------------------------------


def _check(value, threshold, passed: bool) -> dict:
    return {"value": value, "threshold": threshold, "passed": bool(passed)}


def _run_simulate(plan: Plan, out: Path):
    s = plan.doc["simulate"]
    traj = integrate(plan.state, plan.objects["initial"], s["s_span"], plan.objects["cfg"])
    traj.to_csv(out / "trajectory.csv")
    results = {"trajectory": traj.summary(), "integrator": config_dict(plan.objects["cfg"])}
    checks = {"completed": _check(traj.reason, "complete", traj.reason == "complete")}
    if "expect_final" in plan.objects:
        tol = s.get("tolerance", 1e-8)
        dev = float(np.max(np.abs(traj.final - plan.objects["expect_final"])))
        checks["final_event"] = _check(dev, tol, dev <= tol)
    if s.get("proper_time_audit", False):
        rep = proper_time_audit(plan.state, traj)
        results["proper_time"] = {"max_residual_v": rep.max_residual_v, "max_residual_f": rep.max_residual_f,
                                  "tachyonic_segments": rep.tachyonic_segments,
                                  "sign_consistent": rep.sign_consistent}
        checks["proper_time"] = _check(rep.max_residual_v, 1e-4, rep.max_residual_v < 1e-4)
    return results, checks


def _run_equivariance(plan: Plan, out: Path):
    e = plan.doc["equivariance"]
    spec = plan.objects["spec"]
    samples = sample(plan.state, spec)
    samples.to_csv(out / "ensemble.csv", plan.state.massive)
    runs, checks = [], {}
    for ds in e["delta_s"]:
        rep = equivariance_test(plan.state, spec, ds, plan.objects["cfg"], bins=e.get("bins", 20), samples=samples)
        runs.append(rep.to_dict())
        checks[f"chi2_delta_s={ds:g}"] = _check(rep.p_min, rep.threshold, rep.passed)
    return {"sampling": samples.meta, "runs": runs}, checks


def _run_measure(plan: Plan, out: Path):
    sc = plan.objects["scenario"]
    rep = run_measurement(sc, plan.objects["state"])
    _write_table(out / "branches.csv", ["branch", "expected", "empirical", "stderr"],
                 [[b, e, p, s] for b, (e, p, s) in enumerate(zip(rep.expected, rep.empirical, rep.stderr))])
    results = {"branch_table": rep.to_dict()}
    checks = {"born_rule_3sigma": _check(float(np.max(np.abs(rep.empirical - rep.expected) / rep.stderr)), 3.0,
                                         rep.within),
              "unclassified_rate": _check(rep.unclassified_rate, 0.01, rep.unclassified_rate < 0.01)}
    if plan.doc["measure"].get("t_doubling", False):
        r2 = run_measurement(replace(sc, T=2 * sc.T))
        z = float(np.max(np.abs(rep.empirical - r2.empirical) / rep.stderr))
        results["t_doubled"] = r2.to_dict()
        checks["t_doubling_1sigma"] = _check(z, 1.0, z < 1.0)
    return results, checks


def _run_correlate(plan: Plan, out: Path):
    cd = plan.doc["correlate"]
    sc = plan.objects["scenario"]
    rep = run_correlation(sc, plan.objects["state"])
    B1, B2 = rep.expected.shape
    _write_table(out / "joint_table.csv", ["b1", "b2", "expected", "empirical", "stderr"],
                 [[i, j, rep.expected[i, j], rep.empirical[i, j], rep.stderr[i, j]]
                  for i in range(B1) for j in range(B2)])
    z = float(np.max(np.abs(rep.empirical - rep.expected) / np.where(rep.stderr > 0, rep.stderr, np.inf)))
    results = {"joint_table": rep.to_dict()}
    checks = {"joint_3sigma": _check(z, 3.0, rep.within),
              "unclassified_rate": _check(rep.unclassified_rate, 0.01, rep.unclassified_rate < 0.01)}
    if cd.get("chsh", False):
        ch = run_chsh(replace(sc, boosts=(None, None)))
        results["chsh"] = {"correlations": ch.correlations, "S": ch.S, "stderr": ch.stderr, "expected": ch.expected}
        checks["chsh_3sigma"] = _check(ch.S, ch.expected, ch.passed)
    if cd.get("frame_mix") is not None:
        fm = frame_mix_check(sc)
        results["frame_mix"] = {"reference": fm.reference.to_dict(), "mixed": fm.mixed.to_dict(), "max_z": fm.max_z}
        checks["frame_mix"] = _check(fm.max_z, 3.0, fm.passed)
    return results, checks


def _run_boost_check(plan: Plan, out: Path):
    b = plan.doc["boost_check"]
    tol = b.get("tolerance", 1e-6)
    traj = integrate(plan.state, plan.objects["initial"], b["s_span"], plan.objects["cfg"])
    traj.to_csv(out / "trajectory.csv")
    rep = boost_covariance_check(plan.state, plan.objects["initial"], b["s_span"], plan.objects["boost"],
                                 plan.objects["cfg"])
    results = {"max_trajectory_deviation": rep.max_trajectory_deviation,
               "max_density_deviation": rep.max_density_deviation, "beta": b["beta"]}
    checks = {"trajectory": _check(rep.max_trajectory_deviation, tol, rep.max_trajectory_deviation <= tol),
              "density": _check(rep.max_density_deviation, tol, rep.max_density_deviation <= tol)}
    return results, checks


def _run_classical_limit(plan: Plan, out: Path):
    c = plan.doc["classical_limit"]
    cs, x0 = plan.objects["cstate"], plan.objects["initial"]
    ctraj = classical_trajectory(cs, x0, c["tau_span"], c.get("samples", 101))
    ctraj.to_csv(out / "classical_trajectory.csv")
    q = integrate(plan.objects["quantum"], x0, c["tau_span"], plan.objects["cfg"])
    q.to_csv(out / "quantum_trajectory.csv")
    closed = x0[None] + (q.s - q.s[0])[:, None, None] * cs.velocities[None]
    tol = c.get("tolerance", 1e-9)
    dev = float(np.max(np.abs(q.X - closed)))
    results = {"quantum_classical_deviation": dev, "classical_final": ctraj.final.tolist()}
    checks = {"quantum_classical": _check(dev, tol, dev <= tol)}
    if "delta" in c:
        w, h = c["delta"].get("width", 0.2), c["delta"].get("spacing", 0.05)
        try:
            coarse = delta_equivariance_check(ctraj, w, h)
            fine = delta_equivariance_check(ctraj, w / 2, h / 2)
        except ValueError as e:
            raise ScenarioError(str(e), "classical_limit.delta") from None
        ratio = coarse.weak_residual / fine.weak_residual
        results["delta"] = {"coarse": coarse._asdict(), "fine": fine._asdict(), "ratio": ratio}
        checks["delta_refinement"] = _check(ratio, 1.8, ratio >= 1.8)
        checks["delta_marginal_l1"] = _check(fine.marginal_l1, 1e-6, fine.marginal_l1 <= 1e-6)
    if c.get("nonrel", False):
        nr = nonrel_limit_check(cs)
        results["nonrel"] = nr._asdict()
        checks["dtau_dt"] = _check(nr.dtau_dt_deviation, nr.speed**2, nr.dtau_dt_deviation <= nr.speed**2)
        checks["many_time_identity"] = _check(nr.identity_residual, 1e-6, nr.identity_residual < 1e-6)
    return results, checks


RUNNERS = {k: globals()[f"_run_{k}"] for k in KINDS}


def _write_table(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(str(v) if isinstance(v, (int, np.integer)) else "%.17g" % v for v in r) + "\n")


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return float(v) if math.isfinite(v) else None
    if isinstance(v, complex):
        return {"re": v.real, "im": v.imag}
    return v if v is None or isinstance(v, str) else str(v)


def run(doc: dict, out: Path, seed_override: int | None = None, workers: int = 1) -> tuple[int, dict]:
    """Validate and execute one scenario; returns (exit code, report)."""
    effective = copy.deepcopy(doc)
    if seed_override is not None:
        effective["seed"] = seed_override
    plan = validate(effective, workers=workers)
    out.mkdir(parents=True, exist_ok=True)
    results, checks = RUNNERS[plan.kind](plan, out)
    passed = all(c["passed"] for c in checks.values())
    report = {
        "tool": "relbohm",
        "version": __version__,
        "scenario_sha256": scenario_hash(effective),
        "kind": plan.kind,
        "seed": plan.seed,
        "checks": checks,
        "passed": passed,
        "results": results,
    }
    with open(out / "report.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return (EXIT_OK if passed else EXIT_FAILED), report


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="relbohm", description="Relativistic Bohmian trajectory experiments.")
    ap.add_argument("--version", action="version", version=f"relbohm {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="validate and run a scenario")
    r.add_argument("scenario")
    r.add_argument("--out", help="output directory (default: scenario 'output' or ./out/<name>)")
    r.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="ensemble worker threads")
    r.add_argument("--seed-override", type=int, help="replace the scenario seed")
    v = sub.add_parser("validate", help="check a scenario without running it")
    v.add_argument("scenario")
    sub.add_parser("schema", help="print the scenario JSON schema")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "schema":
        print(json.dumps(load_schema(), indent=2))
        return EXIT_OK
    stage = "load"
    try:
        doc = load_scenario(args.scenario)
        if args.command == "validate":
            stage = "validate"
            plan = validate(doc)
            print(f"ok: {plan.kind} scenario, seed {plan.seed}")
            return EXIT_OK
        if args.workers < 1:
            raise ScenarioError("must be >= 1", "--workers")
        out = Path(args.out or doc.get("output") or Path("out") / Path(args.scenario).stem)
        stage = f"run:{doc.get('kind')}"
        code, report = run(doc, out, args.seed_override, args.workers)
    except ScenarioError as e:
        print(f"invalid scenario: {e}", file=sys.stderr)
        return EXIT_INVALID
    except BohmError as e:
        print(f"numerical failure in {stage}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    for name, c in report["checks"].items():
        print(f"{'PASS' if c['passed'] else 'FAIL'} {name}: {c['value']} (threshold {c['threshold']})")
    print(f"report: {out / 'report.json'}")
    return code


if __name__ == "__main__":
    sys.exit(main())
