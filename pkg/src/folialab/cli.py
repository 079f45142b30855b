"""Command-line front end: ``folialab <verb> --config scenario.toml``.

Verbs: validate, check, vary, spectrum, flow, sweep (and ``run``, which
dispatches on ``[task].kind``). Every invocation writes ``report.json``
to ``--out``; series go to CSV next to it.

Exit codes: 0 all asserted tolerances pass, 1 tolerance failure,
2 configuration error, 3 numerical abort (chart exit, blow-up).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

SCHEMA = 1

# every default lives here and is echoed into each report
DEFAULTS = {
    "order": 2,
    "resolution": 32,
    "fd_steps": [1e-2, 5e-3, 2.5e-3],
    "exact_tol": 1e-10,
    "discretization_tol": 1e-1,
    "variation_tol": 1e-1,
    "min_order": 1.8,
    "roundoff_floor": 1e-10,
    "stability_tol": "1e-6*(1+|lambda_max|)",
    "spectrum_k": 8,
    "matvec_tol": 1e-10,
    "flow_max_steps": 10000,
    "flow_stop_tol": 1e-8,
    "flow_record_every": 10,
    "harmonic_cfl": 0.2,
    "bienergy_cfl": 0.04,
    "energy_slack": 1e-12,
    "bandlimit": 2,
    "amplitude": 0.1,
    "field_amplitude": 0.1,
}

VERB_TASKS = {
    "validate": ("validate",),
    "check": ("identities",),
    "vary": ("variation", "hessian-breakdown"),
    "spectrum": ("spectrum",),
    "flow": ("flow",),
}
ALL_TASKS = ("validate", "identities", "variation", "spectrum", "flow", "hessian-breakdown")


class ConfigError(Exception):
    pass


class NumericalAbort(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def load_config(path):
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from None
    return cfg


def _require(cfg, dotted):
    node = cfg
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"missing required field '{dotted}'")
        node = node[part]
    return node


def normalize(cfg, verb, seed_override=None):
    """Validate the scenario and fill defaults; raises ConfigError naming the field."""
    cfg = dict(cfg)
    _require(cfg, "source.name")
    task = dict(cfg.get("task", {}))
    kind = task.get("kind")
    if verb == "validate":
        kind = "validate"
    elif verb in VERB_TASKS:
        allowed = VERB_TASKS[verb]
        if kind is None:
            kind = allowed[0]
        elif kind not in allowed:
            raise ConfigError(f"task.kind = {kind!r} does not fit verb {verb!r} (expected {allowed})")
    elif verb in ("run", "sweep"):
        if kind is None:
            raise ConfigError("missing required field 'task.kind'")
    if kind not in ALL_TASKS:
        raise ConfigError(f"task.kind must be one of {ALL_TASKS}, got {kind!r}")
    task["kind"] = kind
    if kind != "validate":
        _require(cfg, "target.name")
    if kind == "variation":
        task.setdefault("order", "first")
        task.setdefault("functional", "energy")
        if task["order"] not in ("first", "second"):
            raise ConfigError("task.order must be 'first' or 'second'")
        if task["functional"] not in ("energy", "bienergy"):
            raise ConfigError("task.functional must be 'energy' or 'bienergy'")
    if kind == "flow":
        task.setdefault("flow", "harmonic")
        if task["flow"] not in ("harmonic", "bienergy"):
            raise ConfigError("task.flow must be 'harmonic' or 'bienergy'")
    cfg["task"] = task
    if seed_override is not None:
        cfg["seed"] = int(seed_override)
    cfg.setdefault("seed", 0)
    src = dict(cfg["source"])
    src.setdefault("params", {})
    src.setdefault("resolution", DEFAULTS["resolution"])
    src.setdefault("order", DEFAULTS["order"])
    cfg["source"] = src
    if "target" in cfg:
        tgt = dict(cfg["target"])
        tgt.setdefault("params", {})
        cfg["target"] = tgt
    mp = dict(cfg.get("map", {}))
    mp.setdefault("init", "identity")
    if mp["init"] not in ("identity", "linear", "seeded-random", "file", "circle", "constant"):
        raise ConfigError(f"map.init {mp['init']!r} is not a known initializer")
    if mp["init"] == "linear":
        _require({"map": mp}, "map.matrix")
    if mp["init"] == "file":
        p = _require({"map": mp}, "map.path")
        if not os.path.exists(p):
            raise ConfigError(f"map.path does not exist: {p}")
    cfg["map"] = mp
    tol = dict(DEFAULTS)
    tol.update(cfg.get("tolerances", {}))
    cfg["tolerances"] = tol
    if verb == "sweep":
        res = cfg.get("resolutions")
        if not isinstance(res, list) or len(res) < 2:
            raise ConfigError("sweep needs 'resolutions' with at least 2 entries")
    return cfg


# ---------------------------------------------------------------------------
# scenario building
# ---------------------------------------------------------------------------


def build_scenario(cfg, resolution=None):
    from . import manifold, section

    src = cfg["source"]
    res = resolution or src["resolution"]
    try:
        m = manifold.build_model(src["name"], src["params"], res, src["order"])
        t = manifold.build_target(cfg["target"]["name"], cfg["target"]["params"]) if "target" in cfg else None
    except manifold.CatalogError as exc:
        raise ConfigError(str(exc)) from None
    if t is None:
        return m, None, None
    mp = cfg["map"]
    seed = cfg["seed"]
    init = mp["init"]
    try:
        if init == "identity":
            phi = section.identity_map(m, t)
        elif init == "linear":
            phi = section.linear_map(m, t, mp["matrix"], mp.get("offset"))
        elif init == "constant":
            phi = section.constant_map(m, t, mp.get("value"))
        elif init == "circle":
            phi = section.circle_map(m, t, mp.get("radius", 1.0), mp.get("center", (0.0, 0.0)))
        elif init == "file":
            phi = section.map_from_json(mp["path"], m, t)
        else:
            base = None
            if "matrix" in mp:
                base = section.linear_map(m, t, mp["matrix"])
            phi = section.random_map(m, t, seed, int(mp.get("bandlimit", cfg["tolerances"]["bandlimit"])),
                                     float(mp.get("amplitude", cfg["tolerances"]["amplitude"])), base)
    except manifold.ChartDomainError as exc:
        raise NumericalAbort(str(exc)) from None
    except (section.ShapeError, ValueError) as exc:
        raise ConfigError(f"map: {exc}") from None
    return m, t, phi


class Verdicts:
    def __init__(self):
        self.items = []

    def add(self, name, value, tol, kind="max", note=""):
        value = None if value is None else float(value)
        if kind == "max":
            ok = value is not None and value <= tol
        elif kind == "min":
            ok = value is not None and value >= tol
        else:
            ok = bool(value)
        self.items.append({"name": name, "value": value, "tol": tol, "kind": kind,
                           "passed": bool(ok), "note": note})

    @property
    def ok(self):
        return all(v["passed"] for v in self.items)


# ---------------------------------------------------------------------------
# tasks
# ---------------------------------------------------------------------------


def identity_residuals(m, t, phi, seed, tol):
    """Named residuals of the operator identities, each tagged exact or discretization."""
    import numpy as np

    from . import calculus as C
    from . import section as S
    from . import tension as T

    out = {}
    bl = min(tol["bandlimit"], m.resolution // 2 - 1)
    amp = tol["field_amplitude"]
    dphi = T.d_T(phi)
    out["tension_identity"] = ("exact", float(np.max(np.abs(
        C.twisted_codifferential(dphi).components + T.tension(phi).components))))
    out["d_nabla_d_T"] = ("exact", float(np.max(np.abs(C.exterior_derivative(dphi).components))))
    out["conservation"] = ("discretization", T.conservation_residual(phi))
    out["weitzenbock"] = ("discretization", C.weitzenbock_check(dphi).residual)
    Y = S.random_field("normal", m, seed + 1, bl, amp)
    out["divergence_theorem"] = ("discretization", C.check_divergence_theorem(Y, m).residual)
    gj = T.generalized_jacobi_identity_residual(Y, m)
    out["jacobi_relation"] = ("exact", gj.relation_residual)
    out["bochner"] = ("discretization", gj.bochner_residual)
    f = S.random_field("scalar", m, seed + 2, bl, amp)
    g = S.random_field("scalar", m, seed + 3, bl, amp)
    a = C.integrate(f.values * C.basic_laplacian(g, m).values, m, "full")
    b = C.integrate(g.values * C.basic_laplacian(f, m).values, m, "full")
    out["basic_laplacian_symmetry"] = ("exact", abs(a - b))
    V = S.random_field("pullback", m, seed + 4, bl, amp, base=phi)
    W = S.random_field("pullback", m, seed + 5, bl, amp, base=phi)
    jv = C.integrate(C.form_inner(T.jacobi_apply(phi, V), W, phi), m)
    jw = C.integrate(C.form_inner(T.jacobi_apply(phi, W), V, phi), m)
    out["jacobi_symmetry"] = ("discretization", abs(jv - jw))
    Cc = getattr(t, "constant_curvature", None)
    if Cc is not None:
        d = T.curvature_action(phi, V).components - T.curvature_action_constant(phi, V, Cc).components
        out["curvature_action_closed_form"] = ("exact", float(np.max(np.abs(d))))
    return out


def task_validate(cfg, report, verdicts, outdir):
    from .manifold import validate_model

    m = build_scenario(cfg)[0]
    rep = validate_model(m)
    report["results"]["validation"] = rep.to_dict()
    verdicts.add("hard_invariants", rep.ok, True, kind="bool")


def task_identities(cfg, report, verdicts, outdir, resolution=None):
    m, t, phi = build_scenario(cfg, resolution)
    tol = cfg["tolerances"]
    res = identity_residuals(m, t, phi, cfg["seed"], tol)
    report["results"]["identities"] = {k: {"class": c, "residual": v} for k, (c, v) in res.items()}
    for k, (c, v) in res.items():
        verdicts.add(k, v, tol["exact_tol"] if c == "exact" else tol["discretization_tol"])
    return {k: v for k, (c, v) in res.items()}


def task_variation(cfg, report, verdicts, outdir, resolution=None):
    from . import section as S
    from . import variational as VR
    from .errors import ChartDomainError

    m, t, phi = build_scenario(cfg, resolution)
    tol = cfg["tolerances"]
    task = cfg["task"]
    bl = min(tol["bandlimit"], m.resolution // 2 - 1)
    V = S.random_field("pullback", m, cfg["seed"] + 4, bl, tol["field_amplitude"], base=phi)
    W = S.random_field("pullback", m, cfg["seed"] + 5, bl, tol["field_amplitude"], base=phi)
    steps = tuple(tol["fd_steps"])
    try:
        if task["order"] == "first":
            rep = VR.fd_first_variation(S.VariationPath(phi, V), task["functional"], steps, cfg["seed"])
        else:
            second = W if task.get("two_parameter", True) else None
            rep = VR.fd_second_variation(S.VariationPath(phi, V, second), task["functional"], steps,
                                         cfg["seed"])
    except ChartDomainError as exc:
        raise NumericalAbort(str(exc)) from None
    report["results"]["variation"] = rep.to_dict()
    scale = 1.0 + abs(rep.fd)
    verdicts.add("fd_vs_formula", rep.residual / scale, tol["variation_tol"],
                 note="relative to 1+|fd|")
    return {"variation_residual": rep.residual}


def task_hessian_breakdown(cfg, report, verdicts, outdir, resolution=None):
    from . import section as S
    from . import tension as T
    from . import variational as VR

    m, t, phi = build_scenario(cfg, resolution)
    tol = cfg["tolerances"]
    if cfg["task"].get("direction", "random") == "tension":
        V = T.tension(phi)
    else:
        bl = min(tol["bandlimit"], m.resolution // 2 - 1)
        V = S.random_field("pullback", m, cfg["seed"] + 4, bl, tol["field_amplitude"], base=phi)
    br = VR.bienergy_hessian(phi, V)
    report["results"]["hessian_breakdown"] = {
        "terms": br.terms, "total": br.total,
        "closed_form_const_curvature": br.closed_form_const_curvature,
        "conservation_residual": T.conservation_residual(phi),
        "relative_harmonicity_residual": T.relative_harmonicity_residual(phi),
    }
    if getattr(t, "constant_curvature", None) is not None:
        nr = abs(br.terms["nabla_R_dphi"]) + abs(br.terms["nabla_R_tau"])
        verdicts.add("nabla_R_terms", nr, tol["exact_tol"])
    return {"total": br.total}


def task_spectrum(cfg, report, verdicts, outdir, resolution=None):
    from . import variational as VR

    m, t, phi = build_scenario(cfg, resolution)
    tol = cfg["tolerances"]
    k = int(cfg["task"].get("k", tol["spectrum_k"]))
    asm = VR.assemble_jacobi(phi, seed=cfg["seed"])
    try:
        st = VR.stability_report(asm, k, cfg["task"].get("iterative"))
    except (ValueError, RuntimeError) as exc:
        raise NumericalAbort(str(exc)) from None
    report["results"]["spectrum"] = st.to_dict() | {"assembly_seconds": asm.seconds,
                                                    "matvec_check": asm.matvec_check}
    if outdir:
        with open(os.path.join(outdir, "spectrum.csv"), "w") as fh:
            fh.write("index,eigenvalue\n")
            for i, lam in enumerate(st.eigenvalues):
                fh.write(f"{i},{lam!r}\n")
    verdicts.add("assembly_matvec", asm.matvec_check, tol["matvec_tol"])
    expect = cfg["task"].get("expect")
    if expect == "stable":
        verdicts.add("stable", st.stable, True, kind="bool")
    elif expect == "unstable":
        verdicts.add("unstable", not st.stable, True, kind="bool")
    if "kernel_dim" in cfg["task"]:
        verdicts.add("kernel_dim", st.kernel_dim == int(cfg["task"]["kernel_dim"]), True, kind="bool")
    return {"lam_min": st.lam_min}


def task_flow(cfg, report, verdicts, outdir, resolution=None):
    from . import flow as F
    from . import section as S

    m, t, phi0 = build_scenario(cfg, resolution)
    tol = cfg["tolerances"]
    task = cfg["task"]
    kind = task["flow"]
    fc = F.FlowConfig(
        dt=task.get("dt"),
        cfl=task.get("cfl", tol["harmonic_cfl"] if kind == "harmonic" else tol["bienergy_cfl"]),
        max_steps=int(task.get("max_steps", tol["flow_max_steps"])),
        stop_tol=float(task.get("stop_tol", tol["flow_stop_tol"])),
        stop_on=task.get("stop_on"),
        record_every=int(task.get("record_every", tol["flow_record_every"])),
        energy_slack=float(tol["energy_slack"]),
    )
    run = F.harmonic_flow if kind == "harmonic" else F.bienergy_descent
    try:
        phi, trace = run(phi0, None, fc)
    except F.FlowAbort as exc:
        report["results"]["flow"] = exc.trace.to_dict() if exc.trace else {}
        if outdir and exc.trace:
            exc.trace.to_csv(os.path.join(outdir, "flow_trace.csv"))
        raise NumericalAbort(str(exc)) from None
    report["results"]["flow"] = {
        "converged": trace.converged, "steps": trace.step[-1], "dt": trace.dt,
        "halvings": trace.halvings, "final_energy": trace.energy[-1],
        "final_bienergy": trace.bienergy[-1], "final_tension_inf": trace.tension_inf[-1],
        "monotone": trace.is_monotone(fc.energy_slack), "winding": trace.winding,
        "seconds": trace.seconds,
    }
    if kind == "bienergy" and not t.is_flat and getattr(t, "constant_curvature", 0) and t.constant_curvature > 0:
        report["results"]["flow"]["note"] = "positive target curvature: no harmonicity claim"
    if outdir:
        trace.to_csv(os.path.join(outdir, "flow_trace.csv"))
        S.map_to_json(phi, os.path.join(outdir, "final_map.json"), {"seed": cfg["seed"]})
    verdicts.add("monotone", trace.is_monotone(fc.energy_slack), True, kind="bool")
    if task.get("expect_converged", False):
        verdicts.add("converged", trace.converged, True, kind="bool")
    return {"final_tension_inf": trace.tension_inf[-1]}


TASKS = {
    "identities": task_identities,
    "variation": task_variation,
    "hessian-breakdown": task_hessian_breakdown,
    "spectrum": task_spectrum,
    "flow": task_flow,
}


def observed_orders(resolutions, values, floor):
    """log2 ratios between successive resolutions; 'at roundoff' below the floor."""
    import math

    out = [None]
    for i in range(1, len(values)):
        a, b = values[i - 1], values[i]
        if a < floor and b < floor:
            out.append("at roundoff")
        elif b <= 0 or a <= 0:
            out.append(None)
        else:
            out.append(math.log(a / b) / math.log(resolutions[i] / resolutions[i - 1]))
    return out


def task_sweep(cfg, report, verdicts, outdir):
    kind = cfg["task"]["kind"]
    if kind not in TASKS:
        raise ConfigError(f"sweep does not support task.kind = {kind!r}")
    tol = cfg["tolerances"]
    resolutions = [int(r) for r in cfg["resolutions"]]
    series = {}
    for res in resolutions:
        sub = {"results": {}}
        vals = TASKS[kind](cfg, sub, Verdicts(), None, res)
        for k, v in vals.items():
            series.setdefault(k, []).append(float(v))
    quantities = cfg["task"].get("quantities", sorted(series))
    table = {}
    for q in quantities:
        if q not in series:
            raise ConfigError(f"sweep quantity {q!r} not produced by task {kind!r}")
        orders = observed_orders(resolutions, series[q], tol["roundoff_floor"])
        table[q] = {"residuals": series[q], "orders": orders}
        for i, o in enumerate(orders[1:], 1):
            if o == "at roundoff":
                verdicts.add(f"{q}@{resolutions[i]}", series[q][i], tol["roundoff_floor"],
                             note="at roundoff")
            else:
                verdicts.add(f"{q}@{resolutions[i]}:order", o, tol["min_order"], kind="min")
    report["results"]["sweep"] = {"resolutions": resolutions, "table": table}
    if outdir:
        with open(os.path.join(outdir, "sweep.csv"), "w") as fh:
            fh.write("quantity,resolution,residual,order\n")
            for q, row in table.items():
                for r, v, o in zip(resolutions, row["residuals"], row["orders"]):
                    fh.write(f"{q},{r},{v!r},{'' if o is None else o}\n")


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _json_default(o):
    try:
        import numpy as np

        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
    except ImportError:  # pragma: no cover
        pass
    return str(o)


def build_parser():
    p = argparse.ArgumentParser(prog="folialab", description=__doc__.split("\n")[0])
    p.add_argument("verb", choices=["validate", "check", "vary", "spectrum", "flow", "sweep", "run"])
    p.add_argument("--config", required=True, help="scenario TOML file")
    p.add_argument("--out", default=".", help="output directory for report.json and CSV series")
    p.add_argument("--threads", type=int, default=None, help="thread count for BLAS/OpenMP")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed (u64)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    os.makedirs(args.out, exist_ok=True)
    report = {"schema": SCHEMA, "verb": args.verb, "config_path": args.config,
              "threads": args.threads, "defaults": DEFAULTS, "results": {}}
    verdicts = Verdicts()
    t0 = time.perf_counter()
    code = 0
    try:
        raw = load_config(args.config)
        cfg = normalize(raw, args.verb, args.seed)
        report["config"] = cfg
        report["seed"] = cfg["seed"]
        verb = args.verb
        if verb == "sweep":
            task_sweep(cfg, report, verdicts, args.out)
        elif cfg["task"]["kind"] == "validate":
            task_validate(cfg, report, verdicts, args.out)
        else:
            TASKS[cfg["task"]["kind"]](cfg, report, verdicts, args.out)
        code = 0 if verdicts.ok else 1
    except ConfigError as exc:
        report["error"] = {"kind": "config", "message": str(exc)}
        print(f"config error: {exc}", file=sys.stderr)
        code = 2
    except NumericalAbort as exc:
        report["error"] = {"kind": "numerical", "message": str(exc)}
        print(f"numerical abort: {exc}", file=sys.stderr)
        code = 3
    report["verdicts"] = verdicts.items
    report["exit_code"] = code
    report["seconds"] = time.perf_counter() - t0
    with open(os.path.join(args.out, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, default=_json_default)
    if code in (0, 1):
        for v in verdicts.items:
            flag = "ok  " if v["passed"] else "FAIL"
            print(f"{flag} {v['name']}: {v['value']} (tol {v['tol']})")
    return code


if __name__ == "__main__":
    sys.exit(main())
