"""Command-line driver: mesh generation, forward convergence tables, inverse reconstructions.

Exit codes: 0 on success, 1 when a numerical or mesh error stops the run,
2 on usage errors (bad flags, malformed or unknown configuration, bad
parameters).
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from . import presets
from .exceptions import BadParams, PolyVemError
from .forward import Q_MODES, error_norms, rates, solve_forward
from .inverse import inverse_study
from .mesh import MESH_KINDS, validate, write_json

COMMANDS = ("mesh", "forward", "inverse")
REFERENCES = ("final", "successive")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: Optional[str] = None
    preset: Optional[str] = None
    mesh_kind: Optional[str] = None
    levels: Optional[list] = None
    seed: int = 0
    k: int = 1
    coeffs: str = "poisson"
    source: str = "sinsin"
    q: str = "pik"
    reference: str = "final"
    measurements: object = None
    noise: float = 0.0
    alpha: object = "auto"
    probe: Optional[list] = None
    n_values: Optional[list] = None
    mesh_params: Optional[dict] = None
    out: Optional[str] = None


CONFIG_KEYS = tuple(f.name for f in fields(RunConfig))


def _levels(text) -> list:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--levels expects comma-separated integers, got {text!r}") from None


def _alpha(text):
    if text == "auto":
        return "auto"
    try:
        a = float(text)
    except (TypeError, ValueError):
        raise UsageError(f"--alpha expects 'auto' or a positive number, got {text!r}") from None
    if not a > 0:
        raise UsageError("--alpha must be positive")
    return a


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polyvem", description=__doc__.splitlines()[0])
    p.add_argument("--cmd", choices=COMMANDS)
    p.add_argument("--config", help="JSON file with any of the keys " + ", ".join(CONFIG_KEYS))
    p.add_argument("--preset", help="named study, e.g. academic or two-pockets")
    p.add_argument("--mesh-kind", choices=MESH_KINDS)
    p.add_argument("--levels", help="comma-separated mesh sizes or refinement counts")
    p.add_argument("--seed", type=int)
    p.add_argument("--k", type=int, choices=(1, 2))
    p.add_argument("--coeffs", choices=sorted(presets.COEFFICIENTS))
    p.add_argument("--source", help="sinsin, zero or delta(x,y)")
    p.add_argument("--q", choices=Q_MODES)
    p.add_argument("--reference", choices=REFERENCES, help="compare point-load levels with the finest or the next level")
    p.add_argument("--measurements", help="JSON file with the measurement functionals")
    p.add_argument("--noise", type=float, help="relative noise level ||n||/||m||")
    p.add_argument("--alpha", help="'auto' or a positive regularisation parameter")
    p.add_argument("--out", help="output path (CSV or mesh JSON)")
    return p


def _read_json(path: str, what: str):
    try:
        return json.loads(Path(path).read_text())
    except OSError as err:
        raise UsageError(f"cannot read {what} {path}: {err.strerror}") from None
    except json.JSONDecodeError as err:
        raise UsageError(f"malformed JSON in {what} {path}: {err}") from None


def _apply_preset(cfg: RunConfig, name: str) -> None:
    try:
        pre = presets.lookup(name)
    except BadParams as err:
        raise UsageError(str(err)) from None
    cfg.preset = pre.name
    cfg.mesh_kind = pre.mesh_kind
    cfg.levels = list(pre.levels)
    cfg.seed = pre.seed
    if isinstance(pre, presets.ForwardPreset):
        cfg.command = cfg.command or "forward"
        cfg.k, cfg.coeffs, cfg.source, cfg.q, cfg.reference = pre.k, pre.coeffs, pre.source, pre.q, pre.reference
    else:
        cfg.command = cfg.command or "inverse"
        cfg.measurements = [dict(m) for m in pre.measurements]
        cfg.noise, cfg.alpha = pre.noise, pre.alpha
        cfg.probe = list(pre.probe) if pre.probe else None
        cfg.n_values = list(pre.n_values) if pre.n_values else None
        cfg.mesh_params = dict(pre.mesh_params)


def resolve_config(argv=None) -> RunConfig:
    """Merge preset, config file and flags, in increasing priority."""
    args = build_parser().parse_args(argv)
    raw = {}
    if args.config:
        raw = _read_json(args.config, "config")
        if not isinstance(raw, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = sorted(set(raw) - set(CONFIG_KEYS))
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    cfg = RunConfig()
    preset = args.preset or raw.get("preset")
    if preset:
        _apply_preset(cfg, preset)
    for key, value in raw.items():
        if key != "preset":
            setattr(cfg, key, value)
    flag_map = {
        "cmd": "command",
        "mesh_kind": "mesh_kind",
        "levels": "levels",
        "seed": "seed",
        "k": "k",
        "coeffs": "coeffs",
        "source": "source",
        "q": "q",
        "reference": "reference",
        "measurements": "measurements",
        "noise": "noise",
        "alpha": "alpha",
        "out": "out",
    }
    for flag, key in flag_map.items():
        value = getattr(args, flag)
        if value is not None:
            setattr(cfg, key, value)
    return _normalise(cfg)


def _normalise(cfg: RunConfig) -> RunConfig:
    if cfg.command not in COMMANDS:
        raise UsageError(f"a command is required: --cmd {{{','.join(COMMANDS)}}}")
    if cfg.mesh_kind is None:
        raise UsageError("--mesh-kind (or a preset) is required")
    if cfg.mesh_kind not in MESH_KINDS:
        raise UsageError(f"unknown mesh kind {cfg.mesh_kind!r}")
    if cfg.levels is None:
        raise UsageError("--levels (or a preset) is required")
    cfg.levels = _levels(cfg.levels)
    if not cfg.levels:
        raise UsageError("--levels is empty")
    cfg.alpha = _alpha(cfg.alpha)
    if cfg.q not in Q_MODES:
        raise UsageError(f"q must be one of {Q_MODES}")
    if cfg.reference not in REFERENCES:
        raise UsageError(f"reference must be one of {REFERENCES}")
    if isinstance(cfg.measurements, str):
        cfg.measurements = _read_json(cfg.measurements, "measurement file")
    if cfg.command == "inverse":
        if cfg.measurements is None:
            raise UsageError("inverse runs need --measurements")
        if not isinstance(cfg.measurements, list) or len(cfg.measurements) == 0:
            raise UsageError("measurement set must be a non-empty list (N >= 1)")
    if cfg.mesh_params is not None and not isinstance(cfg.mesh_params, dict):
        raise UsageError("mesh_params must be a JSON object")
    return cfg


# --- formatting ---------------------------------------------------------------------------


def _num(v, fmt: str = "%.6e") -> str:
    return "-" if v is None else fmt % v


def _h(v) -> str:
    return "%.5f" % v


def _write(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _sidecar(out: Optional[str], tag: str) -> Optional[Path]:
    if not out:
        return None
    p = Path(out)
    return p.with_name(f"{p.stem}.{tag}.csv")


# --- commands -----------------------------------------------------------------------------


def _meshes(cfg: RunConfig):
    return presets.mesh_family(cfg.mesh_kind, cfg.levels, seed=cfg.seed, params=cfg.mesh_params)


def cmd_mesh(cfg: RunConfig) -> int:
    if not cfg.out:
        raise UsageError("mesh generation needs --out")
    meshes = _meshes(cfg)
    ok = True
    out = Path(cfg.out)
    for i, mesh in enumerate(meshes):
        path = out if len(meshes) == 1 else out.with_name(f"{out.stem}_{i}{out.suffix}")
        report = validate(mesh)
        write_json(mesh, path)
        print(json.dumps({"path": str(path), **report.summary()}, sort_keys=True))
        ok &= bool(report.clean)
    return 0 if ok else 1


def forward_table(cfg: RunConfig) -> str:
    coeffs = presets.coefficient_set(cfg.coeffs)
    source, exact = presets.parse_source(cfg.source, coeffs)
    meshes = _meshes(cfg)
    sols = [solve_forward(m, source, coeffs, cfg.k, cfg.q) for m in meshes]
    overlay_ok = cfg.mesh_kind == "voronoi_lloyd"
    n = len(sols)
    if exact is not None:
        errs = [error_norms(s, exact) for s in sols]
    elif cfg.reference == "final":
        errs = [error_norms(s, sols[-1], allow_overlay=overlay_ok) for s in sols[:-1]] + [(0.0, 0.0)]
    else:
        errs = [error_norms(s, t, allow_overlay=overlay_ok) for s, t in zip(sols[:-1], sols[1:])] + [None]
    h = [m.h_max for m in meshes]
    m_defined = n if errs[-1] is not None else n - 1
    r1 = rates(h[:m_defined], [e[0] for e in errs[:m_defined]]) + [None] * (n - m_defined)
    r0 = rates(h[:m_defined], [e[1] for e in errs[:m_defined]]) + [None] * (n - m_defined)
    lines = ["level,h,ndof,err1,rate1,err0,rate0"]
    for i, (s, e) in enumerate(zip(sols, errs)):
        e1, e0 = (None, None) if e is None else e
        lines.append(
            ",".join([str(i), _h(h[i]), str(s.space.n_free), _num(e1), _num(r1[i], "%.4f"), _num(e0), _num(r0[i], "%.4f")])
        )
    return "\n".join(lines) + "\n"


def cmd_forward(cfg: RunConfig) -> int:
    _write(forward_table(cfg), cfg.out)
    return 0


INVERSE_HEADER = "level,h,ndof,alpha,err_m,rate_m,err1_f,err0_f,err1_fh,rate1_fh,err0_fh,rate0_fh,probe"


def _inverse_rows(study, prefix: str = "") -> list:
    lv = study.levels
    h = [L.h for L in lv]
    rm = rates(h, [L.err_m for L in lv])
    defined = [L for L in lv if L.err1_fh is not None]
    r1 = rates(h[: len(defined)], [L.err1_fh for L in defined]) + [None] * (len(lv) - len(defined))
    r0 = rates(h[: len(defined)], [L.err0_fh for L in defined]) + [None] * (len(lv) - len(defined))
    rows = []
    for i, L in enumerate(lv):
        rows.append(
            prefix
            + ",".join(
                [
                    str(i),
                    _h(L.h),
                    str(L.ndof),
                    "%.6e" % study.alpha,
                    _num(L.err_m),
                    _num(rm[i], "%.4f"),
                    _num(L.err1_f),
                    _num(L.err0_f),
                    _num(L.err1_fh),
                    _num(r1[i], "%.4f"),
                    _num(L.err0_fh),
                    _num(r0[i], "%.4f"),
                    _num(L.probe, "%.6f"),
                ]
            )
        )
    return rows


def inverse_tables(cfg: RunConfig) -> dict:
    """Main table plus measurement, reconstruction and probe dumps, keyed by tag."""
    meshes = _meshes(cfg)
    H = presets.parse_measurements(cfg.measurements)
    n_values = cfg.n_values or [len(H)]
    if any(int(N) < 1 or int(N) > len(H) for N in n_values):
        raise UsageError(f"n_values must lie in 1..{len(H)}")
    H_levels = [H] + [presets.transfer_measurements(H, meshes[0], m) for m in meshes[1:]]
    probe = tuple(cfg.probe) if cfg.probe else None
    studies = []
    for N in n_values:
        N = int(N)
        studies.append(
            (
                N,
                inverse_study(
                    meshes,
                    H[:N],
                    presets.SINSIN.u,
                    presets.POISSON_F,
                    noise=float(cfg.noise),
                    seed=int(cfg.seed),
                    alpha=cfg.alpha,
                    probe=probe,
                    H_levels=[h[:N] for h in H_levels],
                ),
            )
        )
    multi = len(studies) > 1
    main = [("N," if multi else "") + INVERSE_HEADER]
    for N, st in studies:
        main += _inverse_rows(st, f"{N}," if multi else "")
    out = {"main": "\n".join(main) + "\n"}
    N, st = studies[-1]
    m_rows = ["i,m,noise,m_noisy"] + [
        f"{i},{st.m[i]:.10e},{st.noise[i]:.10e},{st.m[i] + st.noise[i]:.10e}" for i in range(len(st.m))
    ]
    out["m"] = "\n".join(m_rows) + "\n"
    rec = st.levels[-1].reconstruction
    v = meshes[-1].vertices
    f_rows = ["x,y,f_h"] + [f"{x:.10f},{y:.10f},{f:.10e}" for (x, y), f in zip(v, rec.dofs[: len(v)])]
    out["fh"] = "\n".join(f_rows) + "\n"
    if probe is not None:
        p_rows = ["h," + ",".join(f"N={N}" for N, _ in studies)]
        for i in range(len(meshes)):
            p_rows.append(_h(studies[0][1].levels[i].h) + "," + ",".join("%.6f" % s.levels[i].probe for _, s in studies))
        out["probes"] = "\n".join(p_rows) + "\n"
    return out


def cmd_inverse(cfg: RunConfig) -> int:
    tables = inverse_tables(cfg)
    _write(tables["main"], cfg.out)
    for tag, text in tables.items():
        path = _sidecar(cfg.out, tag)
        if tag != "main" and path is not None:
            path.write_text(text)
    return 0


COMMAND_FUNCS = {"mesh": cmd_mesh, "forward": cmd_forward, "inverse": cmd_inverse}


def main(argv=None) -> int:
    try:
        cfg = resolve_config(argv)
        return COMMAND_FUNCS[cfg.command](cfg)
    except (UsageError, BadParams) as err:
        print(f"polyvem: usage error: {err}", file=sys.stderr)
        return 2
    except (PolyVemError, ValueError) as err:
        print(f"polyvem: error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1
    except SystemExit as err:
        return int(err.code or 0)


if __name__ == "__main__":
    sys.exit(main())
