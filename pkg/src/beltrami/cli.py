"""Command line: scenario runner and one-shot helpers.

    beltrami run <scenario.json | builtin name> [--out DIR]
    beltrami generate <family> [-p key=value ...] [--out DIR]
    beltrami check <field.csv> --factor <f.csv | number> [--max-residual X]
    beltrami render <artifact> [--out file.svg] [--component NAME]
    beltrami scenarios [name]

Exit codes: 0 success, 1 invalid input, 2 numerical failure, 3 diagnostic
threshold violated.  The output root is ``--out``, else $BELTRAMI_OUT, else
./beltrami-out.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import NumericalFailure
from .fieldio import format_rows, read_field, write_field
from .fields import (ChartTag, DiagnosticReport, Grid, ScalarChartField, _jsonable, beltrami_residual,
                     convergence_order, first_integral_defect)
from .generators import (abc_field, cube_grid, radial_beltrami, radial_factor_field, reconstruct_rotational,
                         rotated_harmonic_field, spherical_vortex)
from .gs_solvers import SolverOptions
from .levelset import chart_coefficients, evolve_chart, extract_level_curve, write_chart
from .profiles import Profile
from .pullback import (dirichlet_energy, elliptic_residuals, evolve_constrained, pullback_form, system_residuals,
                       write_form, write_history)
from .rigidity import compatibility_rank, prop31_diagnostic, symmetry_defect, write_spectrum
from .svg import render_svg
from .vortex_solvers import CoreSeed, FreeBoundaryProblem, field_from_vortex, solve_free_boundary

log = logging.getLogger("beltrami")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_THRESHOLD = 0, 1, 2, 3
REQUIRED = object()


def _resolve(params: dict, defaults: dict, where: str) -> dict:
    extra = set(params) - set(defaults)
    if extra:
        raise ValueError(f"{where}: unknown keys {sorted(extra)}")
    out = {}
    for k, v in defaults.items():
        if k in params:
            out[k] = params[k]
        elif v is REQUIRED:
            raise ValueError(f"{where}: missing required key {k!r}")
        else:
            out[k] = v
    return out


def _dump_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n")
    return path


# -- generators ------------------------------------------------------------------------

FAMILIES = {
    "abc": {"A": 1.0, "B": 1.0, "C": 1.0, "n": 32, "length": 2 * np.pi, "noise": 0.0},
    "radial": {"f": 1.0, "r_min": 0.05, "r_max": 5.0, "init": [0.0, 1.0], "step": 1e-3, "nz": 5, "noise": 0.0},
    "rotated-harmonic": {"n": 33, "extent": 1.0, "slope": 1.0, "noise": 0.0},
    "spherical-vortex": {"W": 1.0, "a": 1.0, "R": 6.0, "n": 128, "noise": 0.0},
}


def generate_family(family: str, params: dict, rng: np.random.Generator | None = None):
    """Return (resolved params, vector field, factor) for a named family."""
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; choose from {sorted(FAMILIES)}")
    p = _resolve(params, FAMILIES[family], f"generate {family}")
    if family == "abc":
        grid = cube_grid(int(p["n"]), float(p["length"]))
        u = abc_field(p["A"], p["B"], p["C"], grid)
        f = grid.field(np.ones(grid.shape), "f")
    elif family == "radial":
        u = radial_beltrami(float(p["f"]), (p["r_min"], p["r_max"]), p["init"], p["step"], int(p["nz"]))
        f = radial_factor_field(float(p["f"]), u.grid)
    elif family == "rotated-harmonic":
        e, n = float(p["extent"]), int(p["n"])
        grid = Grid.uniform(ChartTag.CARTESIAN_XY, (-e, -e), (e, e), (n, n))
        x1, x2 = grid.mesh()
        prof = Profile.linear(float(p["slope"]), 0.0, -e, e, n, name="f")
        u = rotated_harmonic_field((grid.field(x1, "v1"), grid.field(-x2, "v2")), prof)
        f = None
    else:
        n = int(p["n"])
        grid = Grid.meridional(p["R"], -p["R"], p["R"], n, 2 * n - 1)
        r, z = grid.mesh()
        psi, lam = spherical_vortex(r, z, p["W"], p["a"])
        u, f = reconstruct_rotational(grid.field(psi, "psi"), Profile.power(1, lam, lo=psi.min(), hi=psi.max(), n=257))
    if p["noise"]:
        if rng is None:
            raise ValueError("noise needs a random generator")
        comps = tuple(c.like(c.values + p["noise"] * rng.standard_normal(c.values.shape)) for c in u.components)
        u = type(u)(u.symmetry, comps, u.profile, u.name)
    return p, u, f


# -- stages --------------------------------------------------------------------------

STAGE_TYPES = ("generate", "solve", "extract", "evolve-chart", "pullback", "evolve-constrained", "diagnose")
STAGE_KEYS = {"id", "type", "inputs", "params", "thresholds"}
SCENARIO_KEYS = {"name", "seed", "io", "stages", "description"}

SOLVE_DEFAULTS = {"kind": "vortex-ring", "W": 1.0, "gamma": 0.0, "l": 2.0, "strength": 1.0, "extent": 8.0,
                  "n": 64, "seed": {"center": [1.0, 0.0], "radius": 1.0, "amplitude": 2.0}, "solver": {}}
EXTRACT_DEFAULTS = {"level": REQUIRED, "n_samples": 256, "component": 0, "case": None}
CHART_DEFAULTS = {"t0": REQUIRED, "steps": 100, "interpolation": "cubic", "xi2": None}
PULLBACK_DEFAULTS = {"xi2": None, "order": 3, "tol": 5e-2, "resample_3d": None}
CONSTRAINED_DEFAULTS = {"path": "case", "tol": 0.1}
DIAGNOSE_DEFAULTS = {"check": REQUIRED, "case": None, "n": None, "kind": None, "tau": None, "t_index": 0}
CHECKS = ("beltrami", "prop31", "system", "elliptic", "energy", "rank", "symmetry")
INPUT_ROLES = {
    "generate": set(),
    "solve": set(),
    "extract": {"factor"},
    "evolve-chart": {"curve"},
    "pullback": {"field", "chart"},
    "evolve-constrained": {"form"},
    "diagnose": {"target", "targets"},
}


def validate_scenario(sc: dict) -> dict:
    if not isinstance(sc, dict):
        raise ValueError("scenario must be a JSON object")
    extra = set(sc) - SCENARIO_KEYS
    if extra:
        raise ValueError(f"scenario: unknown keys {sorted(extra)}")
    if "name" not in sc or "stages" not in sc:
        raise ValueError("scenario needs 'name' and 'stages'")
    seed = sc.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ValueError("seed must be a non-negative integer")
    seen = set()
    for k, st in enumerate(sc["stages"]):
        if not isinstance(st, dict):
            raise ValueError(f"stage {k}: must be an object")
        extra = set(st) - STAGE_KEYS
        if extra:
            raise ValueError(f"stage {k}: unknown keys {sorted(extra)}")
        sid, typ = st.get("id"), st.get("type")
        if not isinstance(sid, str) or not sid:
            raise ValueError(f"stage {k}: needs a string id")
        if sid in seen:
            raise ValueError(f"stage {sid!r}: duplicate id")
        if typ not in STAGE_TYPES:
            raise ValueError(f"stage {sid!r}: unknown type {typ!r}")
        inputs = st.get("inputs", {})
        if not isinstance(inputs, dict):
            raise ValueError(f"stage {sid!r}: inputs must map roles to stage ids")
        bad = set(inputs) - INPUT_ROLES[typ]
        if bad:
            raise ValueError(f"stage {sid!r}: unknown input roles {sorted(bad)}")
        for role, ref in inputs.items():
            refs = ref if isinstance(ref, list) else [ref]
            for r in refs:
                if r not in seen:
                    raise ValueError(f"stage {sid!r}: input {r!r} is not an earlier stage (cycle or forward reference)")
        seen.add(sid)
    return sc


def _need(inputs, role, sid):
    if role not in inputs:
        raise ValueError(f"stage {sid!r}: missing input {role!r}")
    return inputs[role]


class Runner:
    def __init__(self, scenario: dict, out: Path):
        self.sc = validate_scenario(scenario)
        self.out = out
        self.seed = int(scenario.get("seed", 0))
        self.ctx: dict[str, dict] = {}
        self.records: list[dict] = []
        self.failures: list[dict] = []

    def _rng(self, k: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(k,)))

    def run(self):
        self.out.mkdir(parents=True, exist_ok=True)
        for k, st in enumerate(self.sc["stages"]):
            self._stage(k, st)
        self._manifest("threshold-violation" if self.failures else "ok")
        return self.failures

    def _manifest(self, status, error=None):
        import pyamg
        import scipy
        import skimage

        manifest = {
            "scenario": self.sc["name"],
            "description": self.sc.get("description", ""),
            "seed": self.seed,
            "versions": {"beltrami": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "scikit-image": skimage.__version__, "pyamg": pyamg.__version__,
                         "python": platform.python_version()},
            "stages": self.records,
            "status": status,
            "failures": self.failures,
        }
        if error is not None:
            manifest["error"] = error
        _dump_json(self.out / "manifest.json", manifest)

    def _stage(self, k, st):
        sid, typ = st["id"], st["type"]
        inputs = {role: (self.ctx[r] if not isinstance(r, list) else [self.ctx[x] for x in r])
                  for role, r in st.get("inputs", {}).items()}
        rec = {"id": sid, "type": typ, "inputs": st.get("inputs", {}), "rng": {"seed": self.seed, "spawn_key": [k]}}
        handler = getattr(self, "_" + typ.replace("-", "_"))
        log.info("stage %s (%s)", sid, typ)
        outputs = handler(sid, st.get("params", {}), inputs, rec, self._rng(k))
        self.ctx[sid] = outputs
        if "thresholds" in st:
            if "report" not in outputs:
                raise ValueError(f"stage {sid!r}: thresholds need a diagnostic report")
            rec["thresholds"] = st["thresholds"]
            self._check_thresholds(sid, outputs["report"], st["thresholds"])
        self.records.append(rec)

    def _check_thresholds(self, sid, report: DiagnosticReport, thresholds: dict):
        for key, bound in thresholds.items():
            name, _, norm = key.partition(".")
            norm = norm or "norm_inf"
            if name not in report or norm not in ("norm_inf", "norm_l2"):
                raise ValueError(f"stage {sid!r}: threshold on unknown entry {key!r}")
            if not isinstance(bound, dict) or not set(bound) <= {"max", "min"} or not bound:
                raise ValueError(f"stage {sid!r}: threshold {key!r} must be {{'max': x}} and/or {{'min': x}}")
            value = getattr(report[name], norm)
            if ("max" in bound and not value <= bound["max"]) or ("min" in bound and not value >= bound["min"]):
                self.failures.append({"stage": sid, "entry": key, "value": value, "bound": bound})

    # handlers: (sid, params, inputs, record, rng) -> outputs
    def _generate(self, sid, params, inputs, rec, rng):
        params = dict(params)
        if "family" not in params:
            raise ValueError(f"stage {sid!r}: missing required key 'family'")
        family = params.pop("family")
        p, u, f = generate_family(family, params, rng)
        rec["params"] = {"family": family, **p}
        rec["grid"] = u.grid.header()
        rec["artifacts"] = [write_field(self.out / f"{sid}_u.csv", u).name]
        if f is not None:
            rec["artifacts"].append(write_field(self.out / f"{sid}_f.csv", f).name)
        return {"field": u, "factor": f}

    def _solve(self, sid, params, inputs, rec, rng):
        p = _resolve(params, SOLVE_DEFAULTS, f"stage {sid!r}")
        n, e = int(p["n"]), float(p["extent"])
        if p["kind"] == "vortex-ring":
            grid = Grid.meridional(e, -e, e, n, 2 * n - 1)
        else:
            grid = Grid.uniform(ChartTag.CARTESIAN_XY, (-e, 0.0), (e, e), (2 * n - 1, n))
        seed = "trivial" if p["seed"] == "trivial" else CoreSeed(**_resolve(
            p["seed"], {"center": REQUIRED, "radius": REQUIRED, "amplitude": REQUIRED}, f"stage {sid!r} seed"))
        options = SolverOptions.from_spec({"method": "newton", **p["solver"]})
        prob = FreeBoundaryProblem(p["kind"], p["W"], p["gamma"], p["l"], grid, p["strength"], seed, options)
        psi, mask, report = solve_free_boundary(prob)
        u, f = field_from_vortex(psi, prob)
        rec["params"] = {**p, "solver": options.to_dict()}
        rec["tolerances"] = {"solver_tol": options.tol, "cg_tol": options.cg_tol}
        rec["grid"] = grid.header()
        rec["summary"] = {k: v for k, v in report.to_dict().items() if k != "solve"}
        rec["summary"]["iterations"] = report.solve.iterations
        rec["summary"]["final_residual"] = report.solve.final_residual
        names = [write_field(self.out / f"{sid}_{tag}.csv", obj).name
                 for tag, obj in (("psi", psi), ("core_mask", mask), ("u", u), ("f", f))]
        names.append(_dump_json(self.out / f"{sid}_report.json", report.to_dict()).name)
        rec["artifacts"] = names
        return {"psi": psi, "field": u, "factor": f, "solve": report}

    def _extract(self, sid, params, inputs, rec, rng):
        p = _resolve(params, EXTRACT_DEFAULTS, f"stage {sid!r}")
        f = _need(inputs, "factor", sid)["factor"]
        if not isinstance(f, ScalarChartField):
            raise ValueError(f"stage {sid!r}: the factor must be a sampled field")
        curves = extract_level_curve(f, p["level"], int(p["n_samples"]), case=p["case"])
        if not 0 <= p["component"] < len(curves):
            raise ValueError(f"stage {sid!r}: component {p['component']} of {len(curves)}")
        c = curves[p["component"]]
        rec["params"] = p
        rec["summary"] = {"components": len(curves), "closed": c.closed, "case": c.case.value}
        path = self.out / f"{sid}_curve.csv"
        with open(path, "w", newline="") as fh:
            fh.write("xi1,coord1,coord2\n")
            fh.write(format_rows([c.xi1, c.points[:, 0], c.points[:, 1]]))
        rec["artifacts"] = [path.name]
        return {"curve": c, "factor": f}

    def _evolve_chart(self, sid, params, inputs, rec, rng):
        p = _resolve(params, CHART_DEFAULTS, f"stage {sid!r}")
        src = _need(inputs, "curve", sid)
        chart = evolve_chart(src["curve"], src["factor"], float(p["t0"]), int(p["steps"]), p["interpolation"],
                             xi2=p["xi2"])
        chart = chart_coefficients(chart)
        rec["params"] = p
        rec["summary"] = {"level_defect": float(chart.level_defect.max()), "checks": chart.checks}
        rec["artifacts"] = [write_chart(self.out / f"{sid}_chart.csv", chart).name]
        return {"chart": chart}

    def _pullback(self, sid, params, inputs, rec, rng):
        p = _resolve(params, PULLBACK_DEFAULTS, f"stage {sid!r}")
        u = _need(inputs, "field", sid)["field"]
        chart = _need(inputs, "chart", sid)["chart"]
        if p["resample_3d"] is not None:
            box = _resolve(p["resample_3d"], {"lo": REQUIRED, "hi": REQUIRED, "n": REQUIRED}, f"stage {sid!r} resample_3d")
            g3 = Grid.uniform(ChartTag.FULL_3D, box["lo"], box["hi"], box["n"])
            u = u.to_3d(g3, order=int(p["order"]))
            rec["grid"] = g3.header()
        xi2 = p["xi2"]
        if isinstance(xi2, int):
            xi2 = 2 * np.pi * np.arange(xi2) / xi2
        form = pullback_form(u, chart, xi2, tol=p["tol"], order=int(p["order"]))
        rec["params"] = p
        rec["tolerances"] = {"tangency": p["tol"]}
        rec["summary"] = {"tangency_defect": form.tangency_defect, "shape": list(form.beta1.shape)}
        rec["artifacts"] = [write_form(self.out / f"{sid}_form.csv", form).name]
        return {"form": form, "field": u}

    def _evolve_constrained(self, sid, params, inputs, rec, rng):
        p = _resolve(params, CONSTRAINED_DEFAULTS, f"stage {sid!r}")
        form = _need(inputs, "form", sid)["form"]
        out = evolve_constrained(form, path=p["path"], tol=p["tol"])
        rec["params"] = p
        rec["tolerances"] = {"initial_constraint": p["tol"]}
        rec["summary"] = {"constraint_first": float(out.constraint[0]), "constraint_last": float(out.constraint[-1])}
        residuals = [elliptic_residuals(out, k) for k in range(out.beta1.shape[0])]
        rec["artifacts"] = [write_form(self.out / f"{sid}_form.csv", out).name,
                            write_history(self.out / f"{sid}_history.csv", out, residuals).name]
        return {"form": out}

    def _diagnose(self, sid, params, inputs, rec, rng):
        p = _resolve(params, DIAGNOSE_DEFAULTS, f"stage {sid!r}")
        check = p["check"]
        if check not in CHECKS:
            raise ValueError(f"stage {sid!r}: unknown check {check!r}; choose from {list(CHECKS)}")
        targets = inputs.get("targets", [])
        if "target" in inputs:
            targets = [inputs["target"]] + list(targets)
        rec["params"] = p
        artifacts = []
        if check == "beltrami":
            if not targets:
                raise ValueError(f"stage {sid!r}: beltrami check needs targets")
            report = DiagnosticReport(metadata={"levels": []})
            errs, hs = [], []
            for tgt in targets:
                r = beltrami_residual(tgt["field"], tgt["factor"])
                e = r["curl_minus_fu"]
                errs.append(e.norm_inf)
                hs.append(e.grid_spacing)
                report.metadata["levels"].append(r.to_dict())
            report.add("curl_minus_fu", errs[-1], r["curl_minus_fu"].norm_l2, hs[-1])
            report.add("divergence", r["divergence"].norm_inf, r["divergence"].norm_l2, hs[-1])
            if len(errs) > 1:
                orders = convergence_order(errs, hs)
                report.metadata["orders"] = orders
                report.add("observed_order", float(orders.min()), float(orders[-1]), hs[-1])
        elif check == "rank":
            nullity, rr = compatibility_rank(p["case"] or "f(r)", int(p["n"] or 16))
            report = DiagnosticReport(metadata=rr.to_dict())
            report.add("nullity", nullity, nullity, rr.metadata["h1"])
            artifacts.append(write_spectrum(self.out / f"{sid}_spectrum.csv", rr).name)
        elif check == "symmetry":
            if len(targets) != 1:
                raise ValueError(f"stage {sid!r}: symmetry check takes one target")
            d = symmetry_defect(targets[0]["field"], p["kind"] or "rotation", float(p["tau"] or 0.0))
            report = DiagnosticReport(metadata=d.to_dict())
            report.add("symmetry_defect", d.relative_inf, d.norm_l2)
        else:
            if len(targets) != 1 or "form" not in targets[0]:
                raise ValueError(f"stage {sid!r}: {check} check takes one pullback form")
            form = targets[0]["form"]
            if check == "prop31":
                report = prop31_diagnostic(form)
            elif check == "system":
                report = system_residuals(form)
            elif check == "elliptic":
                report = elliptic_residuals(form, int(p["t_index"]))
            else:
                ch = form.chart
                energies = [dirichlet_energy(form.beta2[k], ch.p[k], ch.q[k], ch.h1, form.h2)
                            for k in range(form.beta1.shape[0])]
                report = DiagnosticReport(metadata={"per_t": energies})
                report.add("dirichlet_energy", max(energies), float(np.sqrt(np.mean(np.square(energies)))), ch.h1)
        artifacts.append(_dump_json(self.out / f"{sid}_report.json", report.to_dict()).name)
        rec["artifacts"] = artifacts
        rec["summary"] = {e.name: {"norm_inf": e.norm_inf, "norm_l2": e.norm_l2} for e in report.entries}
        return {"report": report}


# -- built-in scenarios ------------------------------------------------------------------

BUILTIN = {
    "abc-residual": {
        "name": "abc-residual",
        "description": "ABC flow residual on two grids; the observed order should be close to 2",
        "seed": 0,
        "stages": [
            {"id": "abc32", "type": "generate", "params": {"family": "abc", "n": 32}},
            {"id": "abc64", "type": "generate", "params": {"family": "abc", "n": 64}},
            {"id": "residual", "type": "diagnose", "inputs": {"targets": ["abc32", "abc64"]},
             "params": {"check": "beltrami"}, "thresholds": {"observed_order": {"min": 1.8}}},
        ],
    },
    "torus-rigidity": {
        "name": "torus-rigidity",
        "description": "vortex ring -> torus level of f -> chart -> pullback -> constancy diagnostics",
        "seed": 0,
        "stages": [
            {"id": "ring", "type": "solve",
             "params": {"kind": "vortex-ring", "l": 2, "extent": 8.0, "n": 128,
                        "seed": {"center": [1.0, 0.0], "radius": 1.0, "amplitude": 2.0}}},
            {"id": "level", "type": "extract", "inputs": {"factor": "ring"}, "params": {"level": 2.0, "n_samples": 128}},
            {"id": "chart", "type": "evolve-chart", "inputs": {"curve": "level"},
             "params": {"t0": 1.0, "steps": 20, "interpolation": "cubic"}},
            {"id": "form", "type": "pullback", "inputs": {"field": "ring", "chart": "chart"}},
            {"id": "constancy", "type": "diagnose", "inputs": {"target": "form"}, "params": {"check": "prop31"},
             "thresholds": {"beta2_variation": {"max": 5e-3}}},
            {"id": "form3d", "type": "pullback", "inputs": {"field": "ring", "chart": "chart"},
             "params": {"xi2": 32, "resample_3d": {"lo": [-2.6, -2.6, -1.6], "hi": [2.6, 2.6, 1.6], "n": [53, 53, 33]}}},
            {"id": "constancy3d", "type": "diagnose", "inputs": {"target": "form3d"}, "params": {"check": "prop31"},
             "thresholds": {"beta1_xi2_variation": {"max": 5e-3}}},
            {"id": "energy", "type": "diagnose", "inputs": {"target": "form"}, "params": {"check": "energy"},
             "thresholds": {"dirichlet_energy": {"max": 1e-3}}},
        ],
    },
}


def load_scenario(ref: str) -> dict:
    if ref in BUILTIN:
        return json.loads(json.dumps(BUILTIN[ref]))
    path = Path(ref)
    if not path.exists():
        raise ValueError(f"no scenario file or built-in named {ref!r}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from exc


def output_root(arg: str | None) -> Path:
    return Path(arg or os.environ.get("BELTRAMI_OUT") or "beltrami-out")


def run_scenario(ref, out: str | Path | None = None) -> int:
    """Run a scenario (dict, file path or built-in name); returns the exit code."""
    try:
        sc = dict(ref) if isinstance(ref, dict) else load_scenario(str(ref))
        validate_scenario(sc)
    except ValueError as exc:
        log.error("invalid scenario: %s", exc)
        return EXIT_INVALID
    target = output_root(None if out is None else str(out)) / sc.get("io", sc["name"])
    runner = Runner(sc, target)
    try:
        failures = runner.run()
    except NumericalFailure as exc:
        runner._manifest("numerical-failure", f"{type(exc).__name__}: {exc}")
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except (ValueError, KeyError, TypeError) as exc:
        runner._manifest("invalid", f"{type(exc).__name__}: {exc}")
        log.error("invalid input: %s", exc)
        return EXIT_INVALID
    if failures:
        for f in failures:
            log.error("threshold violated: stage %s entry %s = %.6g (bound %s)", f["stage"], f["entry"], f["value"],
                      f["bound"])
            print(f"FAIL {f['stage']} {f['entry']} = {f['value']:.6g} bound {f['bound']}")
        return EXIT_THRESHOLD
    print(f"ok: {target}")
    return EXIT_OK


# -- one-shot commands ---------------------------------------------------------------


def _parse_params(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"parameter {item!r} is not key=value")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def cmd_generate(args) -> int:
    params = _parse_params(args.param)
    rng = np.random.default_rng(np.random.SeedSequence(args.seed))
    _, u, f = generate_family(args.family, params, rng)
    out = output_root(args.out)
    out.mkdir(parents=True, exist_ok=True)
    print(write_field(out / f"{args.family}_u.csv", u))
    if f is not None:
        print(write_field(out / f"{args.family}_f.csv", f))
    return EXIT_OK


def cmd_check(args) -> int:
    u = read_field(args.field)
    if args.factor is None:
        f = None
    else:
        try:
            f = float(args.factor)
        except ValueError:
            f = read_field(args.factor)
    report = beltrami_residual(u, f)
    if u.symmetry != "z-planar":
        report = report.merge(first_integral_defect(u, f))
    print(report.to_json())
    if args.max_residual is not None and report["curl_minus_fu"].norm_inf > args.max_residual:
        print(f"FAIL curl_minus_fu = {report['curl_minus_fu'].norm_inf:.6g} > {args.max_residual:g}")
        return EXIT_THRESHOLD
    return EXIT_OK


def _find_history(obj):
    if isinstance(obj, dict):
        if "residual_history" in obj:
            return obj["residual_history"]
        for v in obj.values():
            h = _find_history(v)
            if h is not None:
                return h
    return None


def cmd_render(args) -> int:
    path = Path(args.artifact)
    out = Path(args.out) if args.out else path.with_suffix(".svg")
    if path.suffix == ".json":
        history = _find_history(json.loads(path.read_text()))
        if history is None:
            raise ValueError(f"{path}: no residual_history to plot")
        render_svg(history, out)
    else:
        obj = read_field(path)
        if not isinstance(obj, ScalarChartField):
            names = [c.name for c in obj.components]
            if args.component is not None:
                if args.component not in names:
                    raise ValueError(f"component {args.component!r} not in {names}")
                obj = obj.components[names.index(args.component)]
            else:
                mag = np.sqrt(sum(a * a for a in obj.arrays()))
                obj = obj.components[0].like(mag, "|u|")
        if obj.grid.ndim == 3:
            # middle slice normal to the last axis
            k = obj.grid.shape[2] // 2
            g = obj.grid
            obj = ScalarChartField(ChartTag.CARTESIAN_XY, g.origin[:2], g.spacing[:2], obj.values[:, :, k],
                                   f"{obj.name} (x3 = {g.axes()[2][k]:.4g})")
        render_svg(obj, out)
    print(out)
    return EXIT_OK


def cmd_scenarios(args) -> int:
    if args.name:
        if args.name not in BUILTIN:
            raise ValueError(f"no built-in scenario {args.name!r}")
        print(json.dumps(BUILTIN[args.name], indent=2, sort_keys=True))
    else:
        for name, sc in sorted(BUILTIN.items()):
            print(f"{name}: {sc['description']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beltrami", description="Beltrami field laboratory")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a JSON scenario (file or built-in name)")
    p.add_argument("scenario")
    p.add_argument("--out", help="output root (default $BELTRAMI_OUT or ./beltrami-out)")

    p = sub.add_parser("generate", help="write a ground-truth field")
    p.add_argument("family", choices=sorted(FAMILIES))
    p.add_argument("-p", "--param", action="append", help="family parameter key=value (JSON values)")
    p.add_argument("--seed", type=int, default=0, help="seed for the optional noise")
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("check", help="Beltrami residual of a field file")
    p.add_argument("field")
    p.add_argument("--factor", help="factor field file or a constant")
    p.add_argument("--max-residual", type=float, help="exit 3 above this max-norm residual")

    p = sub.add_parser("render", help="SVG of a field file or a solver report")
    p.add_argument("artifact")
    p.add_argument("--out")
    p.add_argument("--component", help="vector component to draw (default |u|)")

    p = sub.add_parser("scenarios", help="list or print built-in scenarios")
    p.add_argument("name", nargs="?")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "run":
        return run_scenario(args.scenario, args.out)
    commands = {"generate": cmd_generate, "check": cmd_check, "render": cmd_render, "scenarios": cmd_scenarios}
    try:
        return commands[args.command](args)
    except NumericalFailure as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except (ValueError, OSError, KeyError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
