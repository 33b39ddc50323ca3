"""Config-driven pipeline runner and report emitter.

Every stage writes JSON artifacts into the output directory; timings and
versions go to metadata.json so the other artifacts are byte-identical for a
fixed config and seed.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .complexes import (FLAVORS, assemble_plain, assemble_s1, assemble_z2, complex_to_dict,
                        homology_to_dict, homology_z2, quotient_commutes)
from .continuation import (default_delta, induced_homology, interior, is_homology_iso,
                           make_schedule, run_continuation)
from .critical import break_circles, ensure_morse, find_critical_points, record_to_dict
from .errors import (BoundarySquareNonzero, ChainMapViolation, ConfigError, MissingArtifact,
                     ParseError, RFHError, ValidationError)
from .grading import grade
from .orbits import Trajectory, boundary_counts, find_connecting_orbits, orbit_to_dict, ps_monitor
from .potentials import check_starshape, potential_from_dict, potential_to_dict
from .spectrum import build_model, model_to_json

log = logging.getLogger("rfh")

EXIT_OK, EXIT_VALIDATION, EXIT_GATE, EXIT_NUMERIC = 0, 2, 3, 4

DEFAULTS = {
    "flavor": "plain",
    "tol": 1e-10,
    "orbit_tol": 1e-9,
    "n_starts": 200,
    "orbit_starts": 5,
    "seed": 0,
    "collocation": {"m": 64, "p": 8},
    "break_strength": 1e-2,
    "ps_epsilon": 0.1,
    "output_dir": "rfh_out",
    "continuation": None,
}
MODEL_KEYS = {"kind", "truncation_params", "complex_structure"}
COLLOCATION_KEYS = {"m", "p"}
CONTINUATION_KEYS = {"target", "delta", "sample_seed"}
TOP_KEYS = {"model", "potential", "window"} | set(DEFAULTS)


@dataclass
class RunConfig:
    model: dict
    potential: dict
    window: tuple
    flavor: str = "plain"
    tol: float = 1e-10
    orbit_tol: float = 1e-9
    n_starts: int = 200
    orbit_starts: int = 5
    seed: int = 0
    collocation: dict = field(default_factory=lambda: {"m": 64, "p": 8})
    break_strength: float = 1e-2
    ps_epsilon: float = 0.1
    output_dir: str = "rfh_out"
    continuation: dict | None = None


def _reject_unknown(doc, allowed, prefix):
    for key in doc:
        if key not in allowed:
            raise ValidationError(f"unknown key {key!r}", f"{prefix}{key}")


def _positive(val, path, kind=float):
    try:
        out = kind(val)
    except (TypeError, ValueError):
        raise ValidationError(f"expected a {kind.__name__}, got {val!r}", path) from None
    if kind is int and out != val:
        raise ValidationError(f"expected an integer, got {val!r}", path)
    if out <= 0:
        raise ValidationError("must be positive", path)
    return out


def validate_config(doc) -> RunConfig:
    if not isinstance(doc, dict):
        raise ValidationError("config must be a JSON object")
    _reject_unknown(doc, TOP_KEYS, "")
    for key in ("model", "potential", "window"):
        if key not in doc:
            raise ValidationError("missing required key", key)
    cfg = {**DEFAULTS, **doc}
    cfg["collocation"] = {**DEFAULTS["collocation"], **(doc.get("collocation") or {})}

    model = cfg["model"]
    if not isinstance(model, dict):
        raise ValidationError("expected an object", "model")
    _reject_unknown(model, MODEL_KEYS, "model.")
    try:
        build_model(model.get("kind"), model.get("truncation_params", {}),
                    bool(model.get("complex_structure", False)))
    except (ValueError, KeyError, TypeError) as exc:
        raise ValidationError(str(exc), "model") from None

    try:
        potential_from_dict(cfg["potential"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ValidationError(str(exc), "potential") from None

    w = cfg["window"]
    if not (isinstance(w, (list, tuple)) and len(w) == 2
            and all(isinstance(x, (int, float)) for x in w)):
        raise ValidationError("expected [a, b]", "window")
    if not w[0] < w[1]:
        raise ValidationError("window must satisfy a < b", "window")
    if cfg["flavor"] not in FLAVORS:
        raise ValidationError(f"flavor must be one of {FLAVORS}", "flavor")
    for key in ("tol", "orbit_tol", "break_strength", "ps_epsilon"):
        cfg[key] = _positive(cfg[key], key)
    for key in ("n_starts", "orbit_starts"):
        cfg[key] = _positive(cfg[key], key, int)
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool):
        raise ValidationError("expected an integer", "seed")
    _reject_unknown(cfg["collocation"], COLLOCATION_KEYS, "collocation.")
    for key in COLLOCATION_KEYS:
        cfg["collocation"][key] = _positive(cfg["collocation"][key], f"collocation.{key}", int)
    cont = cfg["continuation"]
    if cont is not None:
        if not isinstance(cont, dict) or "target" not in cont:
            raise ValidationError("expected an object with a target potential", "continuation")
        _reject_unknown(cont, CONTINUATION_KEYS, "continuation.")
        try:
            potential_from_dict(cont["target"])
        except (ValueError, KeyError, TypeError) as exc:
            raise ValidationError(str(exc), "continuation.target") from None
        if cont.get("delta") is not None:
            _positive(cont["delta"], "continuation.delta")
    cfg["window"] = (float(w[0]), float(w[1]))
    return RunConfig(**cfg)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read config: {exc}", str(path)) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}", str(path)) from None
    return validate_config(doc)


# -- pipeline --------------------------------------------------------------

def _dump(out, name, obj):
    (out / name).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


class Pipeline:
    """Stages of a run sharing one config and output directory."""

    STAGES = ("spectrum", "critical", "complex", "homology")

    def __init__(self, cfg: RunConfig, out=None):
        self.cfg = cfg
        self.out = Path(out or cfg.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        m = cfg.model
        self.model = build_model(m["kind"], m.get("truncation_params", {}),
                                 bool(m.get("complex_structure", False)))
        self.pot = potential_from_dict(cfg.potential)
        self.gates = {}
        self.timings = {}
        self.diag = {}

    def _timed(self, name, fn):
        t0 = time.perf_counter()
        out = fn()
        self.timings[name] = round(time.perf_counter() - t0, 3)
        return out

    def spectrum(self):
        (self.out / "model.json").write_text(model_to_json(self.model) + "\n")

    def critical(self):
        cfg = self.cfg
        recs = self._timed("critical", lambda: find_critical_points(
            self.model, self.pot, cfg.window, cfg.n_starts, cfg.seed, cfg.tol))
        self.pot, recs = ensure_morse(self.model, self.pot, recs, cfg.tol, cfg.window,
                                      cfg.n_starts, cfg.seed)
        self.records = grade(self.model, self.pot, recs)
        self.gates["critical_residuals"] = all(r.residual <= cfg.tol for r in self.records)
        _dump(self.out, "critical_points.json", [record_to_dict(r) for r in self.records])
        return self.records

    def _orbit_kwargs(self):
        c = self.cfg
        return dict(n_starts=c.orbit_starts, seed=c.seed, tol=c.orbit_tol,
                    m=c.collocation["m"], p=c.collocation["p"])

    def complex(self):
        cfg = self.cfg
        recs = self.records
        circles = [r for r in recs if r.orbit_type == "circle"]
        flavor = cfg.flavor
        if flavor == "s1" and not circles:
            raise ValidationError("flavor s1 needs critical circles (s1 potential, complex model)",
                                  "flavor")
        if flavor == "z2" and not all(r.orbit_type == "pair" for r in recs):
            raise ValidationError("flavor z2 needs a z2-symmetric potential", "flavor")
        if circles:
            self.orbit_pot, gens = break_circles(self.model, self.pot, circles, cfg.break_strength,
                                                 cfg.tol)
        else:
            self.orbit_pot, gens = self.pot, recs
        self.generators = gens
        kw = self._orbit_kwargs()
        if flavor == "s1":
            by_id = {g.id: g for g in gens}
            orbs = {}
            for c in circles:
                for c2 in circles:
                    if c.rel_index - c2.rel_index == 1:
                        s, t = by_id[c.broken_children[1]], by_id[c2.broken_children[1]]
                        orbs[(s.id, t.id)] = find_connecting_orbits(
                            self.model, self.orbit_pot, s, t, **kw)
            counts = {k: len(v) % 2 for k, v in orbs.items()}
            cc = self._timed("complex", lambda: assemble_s1(circles, counts, cfg.window))
        else:
            counts, orbs = self._timed("orbits", lambda: boundary_counts(
                self.model, self.orbit_pot, gens, **kw))
            if flavor == "z2":
                cc = assemble_z2(gens, counts, cfg.window)
                plain = assemble_plain(gens, counts, cfg.window)
                self.gates["z2_quotient_commutes"] = quotient_commutes(plain, cc, gens)
            else:
                cc = assemble_plain(gens, counts, cfg.window)
        self.gates["boundary_square_zero"] = True
        self.cc, self.orbits = cc, orbs
        self._orbit_diagnostics(orbs)
        doc = complex_to_dict(cc)
        doc["counts"] = [[s, t, int(c)] for (s, t), c in sorted(counts.items())]
        doc["generators_detail"] = [record_to_dict(g) for g in gens]
        _dump(self.out, "boundary.json", doc)
        _dump(self.out, "orbits.json", [orbit_to_dict(o) for lst in orbs.values() for o in lst])
        return cc

    def _orbit_diagnostics(self, orbs):
        cfg = self.cfg
        all_orbs = [o for lst in orbs.values() for o in lst]
        self.gates["orbit_residuals"] = all(o.residual <= cfg.orbit_tol for o in all_orbs)
        a_star = check_starshape(self.orbit_pot, self.model, 32, cfg.seed).min_radial_derivative
        violations, lam_max = 0, 0.0
        for o in all_orbs:
            d = ps_monitor(self.model, self.orbit_pot, Trajectory(o.times, o.nodes, None, True),
                           cfg.window, cfg.ps_epsilon, a_star)
            violations += int(d.bound_violated)
            lam_max = max(lam_max, d.max_abs_lambda)
        self.gates["ps_bounds"] = violations == 0
        self.diag["orbits"] = {
            "n_pairs": len(orbs), "n_orbits": len(all_orbs),
            "max_residual": max((float(o.residual) for o in all_orbs), default=0.0),
            "max_interp_defect": max((float(o.interp_defect) for o in all_orbs), default=0.0),
            "ps_violations": violations, "max_abs_lambda": lam_max, "a_star": a_star,
        }

    def homology(self):
        h = homology_z2(self.cc)
        _dump(self.out, "homology.json", homology_to_dict(h))
        return h

    def continuation(self):
        cfg = self.cfg
        cont = cfg.continuation
        if cont is None:
            raise ValidationError("config has no continuation section", "continuation")
        if cfg.flavor != "plain" or any(r.orbit_type == "circle" for r in self.records):
            raise ValidationError("continuation runs on plain Morse complexes", "flavor")
        target = potential_from_dict(cont["target"])
        delta = cont.get("delta")
        if delta is None:
            a_star = check_starshape(self.pot, self.model, 32, cfg.seed).min_radial_derivative
            delta = default_delta(cfg.window, a_star, cfg.ps_epsilon)
        sched = make_schedule(self.model, self.pot, target, delta, cont.get("sample_seed", 0))
        kw = self._orbit_kwargs()
        run = self._timed("continuation", lambda: run_continuation(
            self.model, sched, self.records, cfg.window, kw["n_starts"], kw["seed"], kw["tol"],
            kw["m"], kw["p"], cfg.tol))
        ind = induced_homology(run.composite)
        doc = {
            "delta": sched.delta, "sup_difference": sched.sup_difference,
            "s_values": sched.s_values,
            "steps": [{"step": j, "chain_map": "OK",
                       "phi": {str(k): M.astype(int).tolist() for k, M in sorted(mp.phi.items())}}
                      for j, mp in enumerate(run.maps)],
            "induced_homology": {str(k): list(v) for k, v in ind.items()},
            "interior_degrees": interior(run.composite),
            "isomorphism": is_homology_iso(run.composite),
            "energy_estimate": run.energy_ok,
        }
        self.gates["chain_maps"] = True
        self.gates["homology_iso"] = doc["isomorphism"]
        _dump(self.out, "continuation.json", doc)
        return run

    def finish(self, stage):
        ok = all(self.gates.values())
        _dump(self.out, "diagnostics.json", {"stage": stage, "gates": self.gates,
                                             "passed": ok, **self.diag})
        _dump(self.out, "metadata.json", {"version": __version__, "timings": self.timings,
                                          "finished": time.strftime("%Y-%m-%dT%H:%M:%S")})
        return ok


def run_pipeline(cfg: RunConfig, out=None, stage="homology") -> int:
    """Run up to ``stage``; returns the process exit code."""
    try:
        pipe = Pipeline(cfg, out)
        pipe.spectrum()
        if stage != "spectrum":
            pipe.critical()
        if stage in ("complex", "homology"):
            pipe.complex()
        if stage == "homology":
            pipe.homology()
        if stage == "continuation":
            pipe.continuation()
    except ConfigError as exc:
        log.error("%s", exc)
        _failure(out or cfg.output_dir, "validation", exc)
        return EXIT_VALIDATION
    except (BoundarySquareNonzero, ChainMapViolation) as exc:
        log.error("%s", exc)
        _failure(out or cfg.output_dir, "gate", exc)
        return EXIT_GATE
    except (RFHError, np.linalg.LinAlgError) as exc:
        log.error("%s", exc)
        _failure(out or cfg.output_dir, "numerical", exc)
        return EXIT_NUMERIC
    return EXIT_OK if pipe.finish(stage) else EXIT_GATE


def _failure(out, kind, exc):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _dump(out, "failure.json", {"kind": kind, "error": type(exc).__name__, "message": str(exc)})


# -- report ------------------------------------------------------------------

def _load(out, name, required=True):
    path = Path(out) / name
    if not path.exists():
        if required:
            raise MissingArtifact(f"{path} not found")
        return None
    return json.loads(path.read_text())


def emit_report(out, stream=None) -> str:
    """Print the graded generator table and write staircase and profile CSVs."""
    out = Path(out)
    stream = stream or sys.stdout
    recs = _load(out, "critical_points.json")
    hom = _load(out, "homology.json", required=False)
    cont = _load(out, "continuation.json", required=False)
    orbs = _load(out, "orbits.json", required=False) or []
    lines = []
    if not recs:
        log.warning("empty window: no critical points")
        lines.append("no generators in window")
    else:
        lines.append(f"{'id':>8} {'rel_index':>9} {'action':>12} {'multiplier':>12} {'type':>8}")
        for r in sorted(recs, key=lambda r: (r["rel_index"] if r["rel_index"] is not None else 0,
                                             r["id"])):
            lines.append(f"{r['id']:>8} {str(r['rel_index']):>9} {r['action']:>12.6f} "
                         f"{r['multiplier']:>12.6f} {r['orbit_type']:>8}")
    if hom:
        lines.append("")
        lines.append(f"homology ({hom['flavor']}), interior degrees {hom['interior_degrees']}")
        for k, v in hom["ranks"].items():
            mark = "" if int(k) in hom["interior_degrees"] else "  (window edge)"
            lines.append(f"  H_{k} = {v}{mark}")
    if cont:
        lines.append("")
        lines.append(f"continuation: {len(cont['steps'])} steps, delta {cont['delta']:.3g}")
        lines.append(f"{'step':>6} {'chain map':>10}")
        for s in cont["steps"]:
            lines.append(f"{s['step']:>6} {s['chain_map']:>10}")
        lines.append(f"induced map on homology bijective: {cont['isomorphism']}")
    with open(out / "staircase.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "rel_index", "action", "multiplier"])
        for r in recs or []:
            w.writerow([r["id"], r["rel_index"], repr(r["action"]), repr(r["multiplier"])])
    with open(out / "orbit_profiles.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source", "target", "orbit", "t", "action"])
        for j, o in enumerate(orbs):
            for t, a in zip(o["times"], o["action_profile"]):
                w.writerow([o["source_id"], o["target_id"], j, repr(t), repr(a)])
    text = "\n".join(lines)
    print(text, file=stream)
    return text


# -- entry point -------------------------------------------------------------

def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="rfh", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("spectrum", "critical", "complex", "homology", "continuation", "report"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "report")
        p.add_argument("--out", required=True)
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "report":
        try:
            emit_report(args.out)
        except MissingArtifact as exc:
            log.error("%s", exc)
            return EXIT_VALIDATION
        return EXIT_OK
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        log.error("%s", exc)
        _failure(args.out, "validation", exc)
        return EXIT_VALIDATION
    return run_pipeline(cfg, args.out, args.command)


def config_to_dict(cfg: RunConfig) -> dict:
    doc = asdict(cfg)
    doc["window"] = list(cfg.window)
    return doc


if __name__ == "__main__":
    sys.exit(main())
