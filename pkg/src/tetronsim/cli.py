"""Batch experiment runner for the tetronsim toolkit.

Subcommands
-----------
``mbqb``
    Measurement-based qubit benchmarking: assignment-error and bias metrics
    from two-measurement subsequence statistics.
``braid``
    Average-fidelity scan of a measurement-braided Clifford class over the
    (p1, p_a) grid at fixed p2.
``qed``
    Ladder-code logical-improvement scan over the (p1, p2) grid plus the
    improvement = 1 contour.
``lifetime``
    Idle-lifetime decay experiment and exponential fit.
``tgate``
    Timed-coupling magic-state preparation fidelity under phase error.
``derive-noise``
    Resolve physical device parameters into simulator noise parameters.
``check``
    Embedded regression battery over all modules.

Configuration comes from an INI file (sections ``[noise]``, ``[run]``, and
one section per subcommand) with command-line flags taking precedence.
Exit codes: 0 success, 1 configuration error, 2 numerical invariant
failure, 3 regression check failure.

Sweeps parallelize over independent grid points with a fixed-size process
pool; results are gathered in work-list order, so outputs are byte-identical
for any worker count.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import multiprocessing
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, benchmarking, braiding, qed
from .channels import (
    NoiseParams,
    derive_noise,
    t_state_fidelity,
    timed_coupling_rotation,
)
from .pauli import PauliString
from .simulator import CircuitBuilder, TrajectoryEnsemble, run_circuit


class ConfigError(Exception):
    """Unusable configuration: bad file, key, value, or flag combination."""


class NumericalError(Exception):
    """A computed result violated a numerical invariant (NaN, out of range)."""


# ---------------------------------------------------------------------------
# Value parsing
# ---------------------------------------------------------------------------


def _to_int(label: str, text: str) -> int:
    try:
        return int(str(text), 10)
    except ValueError as exc:
        raise ConfigError(f"{label} must be an integer, got {text!r}") from exc


def _to_float(label: str, text: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"{label} must be a number, got {text!r}") from exc


def parse_grid(text: str) -> "np.ndarray | None":
    """Grid specification: ``default``, a comma list, ``lin:a:b:n``, or
    ``log:a:b:n`` (n points from a to b, linearly or geometrically)."""
    text = text.strip()
    if text == "default":
        return None
    parts = text.split(":")
    if parts[0] in ("lin", "log"):
        if len(parts) != 4:
            raise ConfigError(
                f"grid spec must look like {parts[0]}:start:stop:count, got {text!r}"
            )
        a = _to_float("grid start", parts[1])
        b = _to_float("grid stop", parts[2])
        n = _to_int("grid count", parts[3])
        if n < 1:
            raise ConfigError(f"grid count must be positive, got {n}")
        if parts[0] == "lin":
            return np.linspace(a, b, n)
        if a <= 0 or b <= 0:
            raise ConfigError("log grid endpoints must be positive")
        return np.geomspace(a, b, n)
    return np.array([_to_float("grid value", v) for v in text.split(",")])


def _parse_int_list(text: str) -> "tuple | None":
    if text.strip() == "default":
        return None
    return tuple(_to_int("list entry", v) for v in text.split(","))


def _parse_float_list(text: str) -> "tuple | None":
    if text.strip() == "default":
        return None
    return tuple(_to_float("list entry", v) for v in text.split(","))


def _conv_choice(*allowed: str):
    def convert(text: str) -> str:
        if text not in allowed:
            raise ConfigError(f"must be one of {', '.join(allowed)}; got {text!r}")
        return text

    return convert


def _conv_posint(text: str) -> int:
    value = _to_int("value", text)
    if value < 1:
        raise ConfigError(f"must be a positive integer, got {value}")
    return value


def _conv_float(text: str) -> float:
    return _to_float("value", text)


# ---------------------------------------------------------------------------
# Experiment option tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Opt:
    convert: "object"
    default: "object"
    help: str
    choices: "tuple | None" = None


_GRID_HELP = "'default', a comma list, or lin:a:b:n / log:a:b:n"

_OPTIONS: dict = {
    "mbqb": {
        "chains": _Opt(_conv_posint, 256, "independent chains in sampled mode"),
        "debruijn": _Opt(
            _conv_posint, 4, "de Bruijn order k; the basis sequence has period 2^k"
        ),
    },
    "braid": {
        "class": _Opt(
            _conv_choice(*braiding.CLIFFORD_CLASSES),
            "S",
            "Clifford class to braid",
            choices=braiding.CLIFFORD_CLASSES,
        ),
        "p2": _Opt(
            _conv_float, None, "two-qubit error rate held fixed (else [noise] p2, else 0.1)"
        ),
        "theta": _Opt(
            _conv_float, None, "coherent idle rotation angle (else [noise] theta)"
        ),
        "grid": _Opt(parse_grid, None, f"p1 and p_a axis: {_GRID_HELP}"),
    },
    "qed": {
        "pa": _Opt(
            _conv_float, None,
            "assignment error rate held fixed (else [noise] p_a, else 0.01)",
        ),
        "theta": _Opt(
            _conv_float, None, "coherent idle rotation angle (else [noise] theta)"
        ),
        "scan": _Opt(parse_grid, None, f"p1 and p2 axis: {_GRID_HELP}"),
        "rounds": _Opt(
            _parse_int_list, (2, 4, 6, 8, 10), "decay-experiment round counts"
        ),
    },
    "lifetime": {
        "basis": _Opt(_conv_choice("X", "Z"), "Z", "measurement basis", ("X", "Z")),
        "idle_steps": _Opt(
            _parse_int_list, tuple(range(0, 31, 3)), "idle counts between measurements"
        ),
    },
    "tgate": {
        "phi": _Opt(_conv_float, math.pi / 8.0, "nominal rotation angle"),
        "delta": _Opt(
            _parse_float_list, (0.0, 0.05, 0.1), "injected phase errors to evaluate"
        ),
    },
    "derive-noise": {},
}

_RUN_KEYS = ("seed", "workers", "out", "mode", "shots")
_EXACT_ONLY = ("braid", "qed", "lifetime", "tgate", "derive-noise")


@dataclass
class Settings:
    """Fully resolved run configuration (defaults < config file < flags)."""

    experiment: str
    noise: NoiseParams
    noise_inputs: dict
    noise_audit: dict
    seed: int
    workers: int
    mode: str
    shots: int
    out: "Path | None"
    check: bool
    options: dict


def _read_ini(path: Path) -> configparser.ConfigParser:
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # noise keys are case-sensitive
    try:
        with open(path, encoding="utf-8") as handle:
            parser.read_file(handle)
    except (configparser.Error, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parser


def _resolve(args: argparse.Namespace, experiment: str) -> Settings:
    ini = _read_ini(Path(args.config)) if args.config else None
    if ini is not None:
        allowed = {"noise", "run"} | set(_OPTIONS)
        unknown = set(ini.sections()) - allowed
        if unknown:
            raise ConfigError(
                f"unknown config section(s) {sorted(unknown)}; "
                f"expected {sorted(allowed)}"
            )

    # -- noise ----------------------------------------------------------
    noise_inputs: dict = {}
    if ini is not None and ini.has_section("noise"):
        noise_inputs.update(dict(ini.items("noise")))
    for item in args.noise or ():
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"--noise expects KEY=VALUE, got {item!r}")
        noise_inputs[key.strip()] = value.strip()
    try:
        noise, audit = derive_noise(noise_inputs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    noise_inputs = {key: float(value) for key, value in noise_inputs.items()}

    # -- run section ------------------------------------------------------
    seed, workers, mode, shots, out = 0, 1, "exact", 1_000_000, None
    if ini is not None and ini.has_section("run"):
        section = dict(ini.items("run"))
        unknown = set(section) - set(_RUN_KEYS)
        if unknown:
            raise ConfigError(
                f"unknown [run] key(s) {sorted(unknown)}; expected {_RUN_KEYS}"
            )
        if "seed" in section:
            seed = _to_int("seed", section["seed"])
        if "workers" in section:
            workers = _to_int("workers", section["workers"])
        if "out" in section:
            out = Path(section["out"])
        if "mode" in section:
            mode = _conv_choice("exact", "sampled")(section["mode"])
        if "shots" in section:
            shots = _to_int("shots", section["shots"])
    if args.seed is not None:
        seed = _to_int("--seed", args.seed)
    if args.workers is not None:
        workers = _to_int("--workers", args.workers)
    if args.out is not None:
        out = Path(args.out)
    if getattr(args, "exact", False):
        mode = "exact"
    if getattr(args, "shots", None) is not None:
        mode = "sampled"
        shots = _to_int("--shots", args.shots)

    if not 0 <= seed < 2**64:
        raise ConfigError(f"seed must be in [0, 2^64), got {seed}")
    if workers < 1:
        raise ConfigError(f"workers must be at least 1, got {workers}")
    if shots < 1:
        raise ConfigError(f"shots must be at least 1, got {shots}")
    if mode == "sampled" and experiment in _EXACT_ONLY:
        raise ConfigError(
            f"{experiment} runs exactly; it has no sampled mode (drop --shots)"
        )

    # -- experiment options ----------------------------------------------
    spec = _OPTIONS[experiment]
    section = (
        dict(ini.items(experiment))
        if ini is not None and ini.has_section(experiment)
        else {}
    )
    unknown = set(section) - set(spec)
    if unknown:
        raise ConfigError(
            f"unknown [{experiment}] key(s) {sorted(unknown)}; "
            f"expected {sorted(spec)}"
        )
    options: dict = {}
    for key, opt in spec.items():
        raw = section.get(key)
        cli_value = getattr(args, "opt_" + key.replace("-", "_"), None)
        if cli_value is not None:
            raw = cli_value
        if raw is None:
            options[key] = opt.default
            continue
        try:
            value = opt.convert(raw)
        except ConfigError as exc:
            raise ConfigError(f"option {key!r}: {exc}") from exc
        options[key] = opt.default if value is None else value

    return Settings(
        experiment=experiment,
        noise=noise,
        noise_inputs=noise_inputs,
        noise_audit=audit,
        seed=seed,
        workers=workers,
        mode=mode,
        shots=shots,
        out=out,
        check=getattr(args, "check", False),
        options=options,
    )


def _validate_noise_grid(**extremes: float) -> None:
    """Reject grid endpoints outside the noise-parameter domain up front,
    so worker processes never see an invalid point."""
    try:
        NoiseParams(
            p_a=extremes.get("p_a", 0.0),
            p1=extremes.get("p1", 0.0),
            p2=extremes.get("p2", 0.0),
            theta=extremes.get("theta", 0.0),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# Numerical invariant checks on results
# ---------------------------------------------------------------------------


def _require_values(
    label: str,
    values,
    low: "float | None" = None,
    high: "float | None" = None,
    allow_inf: bool = False,
    tol: float = 1e-9,
) -> None:
    arr = np.atleast_1d(np.asarray(values, dtype=float))
    flat = arr.reshape(-1)
    for pos, value in enumerate(flat):
        where = f" at flat index {pos}" if flat.size > 1 else ""
        if math.isnan(value):
            raise NumericalError(f"{label} is NaN{where}")
        if math.isinf(value) and not allow_inf:
            raise NumericalError(f"{label} is infinite{where}")
        if low is not None and value < low - tol:
            raise NumericalError(f"{label} = {value!r}{where} is below {low}")
        if high is not None and value > high + tol:
            raise NumericalError(f"{label} = {value!r}{where} is above {high}")


# ---------------------------------------------------------------------------
# Deterministic parallel map
# ---------------------------------------------------------------------------


def _ordered_map(func, tasks: list, workers: int) -> list:
    """Map ``func`` over ``tasks`` preserving order; with more than one
    worker, fan out to a process pool (results still in task order)."""
    if workers <= 1 or len(tasks) <= 1:
        return [func(task) for task in tasks]
    processes = min(workers, len(tasks))
    chunk = max(1, len(tasks) // (4 * processes))
    with multiprocessing.Pool(processes) as pool:
        return pool.map(func, tasks, chunksize=chunk)


def _braid_point(task) -> float:
    name, p1, pa, p2, theta = task
    noise = NoiseParams(p_a=pa, p1=p1, p2=p2, theta=theta)
    return braiding.average_class_fidelity(name, noise)


def _qed_point(task) -> tuple:
    pa, p1, p2, theta, rounds = task
    noise = NoiseParams(p_a=pa, p1=p1, p2=p2, theta=theta)
    metrics, fits = qed.improvement_point(noise, rounds)
    return (
        metrics.lambda_avg,
        metrics.lambda_x,
        metrics.lambda_z,
        fits[("physical", "XX")].acceptance[-1],
        fits[("logical", "XX")].acceptance[-1],
    )


# ---------------------------------------------------------------------------
# Artifact emission
# ---------------------------------------------------------------------------


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        return float(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, Path):
        return str(value)
    return value


def _write_outputs(
    settings: Settings,
    files: dict,
    summary: dict,
    wall_s: float,
    checks: "list | None",
) -> None:
    if settings.out is None:
        return
    try:
        settings.out.mkdir(parents=True, exist_ok=True)
        for name, text in files.items():
            (settings.out / name).write_text(text, encoding="utf-8")
        manifest = {
            "experiment": settings.experiment,
            "version": __version__,
            "seed": settings.seed,
            "workers": settings.workers,
            "mode": settings.mode,
            "shots": settings.shots if settings.mode == "sampled" else None,
            "noise": {
                "p_a": settings.noise.p_a,
                "p1": settings.noise.p1,
                "p2": settings.noise.p2,
                "theta": settings.noise.theta,
            },
            "noise_inputs": _jsonable(settings.noise_inputs),
            "noise_audit": _jsonable(settings.noise_audit),
            "options": _jsonable(settings.options),
            "summary": _jsonable(summary),
            "artifacts": sorted(files),
            "wall_time_s": round(wall_s, 3),
            "checks": checks,
        }
        (settings.out / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise ConfigError(f"cannot write outputs to {settings.out}: {exc}") from exc


def _maybe_check(settings: Settings) -> "list | None":
    if not settings.check:
        return None
    return run_checks(_CHECK_GROUPS[settings.experiment])


def _verdict(checks: "list | None") -> int:
    if checks is not None and any(not c["passed"] for c in checks):
        return 3
    return 0


# ---------------------------------------------------------------------------
# Subcommand implementations
# ---------------------------------------------------------------------------


def cmd_mbqb(args: argparse.Namespace) -> int:
    settings = _resolve(args, "mbqb")
    start = time.perf_counter()
    metrics = benchmarking.benchmark_metrics(
        settings.noise,
        mode=settings.mode,
        shots=settings.shots,
        seed=settings.seed,
        sequence=benchmarking.generate_debruijn(settings.options["debruijn"]),
        chains=settings.options["chains"],
    )
    _require_values("err_a", metrics.err_a, 0.0, 1.0)
    _require_values("err_b", metrics.err_b, 0.0, 1.0)
    wall = time.perf_counter() - start

    if metrics.err_a_interval is None:
        print(f"err_a = {metrics.err_a:.9g}")
        print(f"err_b = {metrics.err_b:.9g}")
    else:
        print(f"err_a = {metrics.err_a:.9g} +- {metrics.err_a_interval:.3g} (95%)")
        print(f"err_b = {metrics.err_b:.9g} +- {metrics.err_b_interval:.3g} (95%)")
    print(f"reset_distance = {metrics.reset_distance:.3g}")

    checks = _maybe_check(settings)
    summary = {
        "err_a": metrics.err_a,
        "err_b": metrics.err_b,
        "err_a_interval": metrics.err_a_interval,
        "err_b_interval": metrics.err_b_interval,
        "reset_distance": metrics.reset_distance,
    }
    _write_outputs(
        settings, {"mbqb_metrics.json": metrics.to_json() + "\n"}, summary, wall, checks
    )
    return _verdict(checks)


def _noise_fallback(
    settings: Settings, option_value, param: str, default: float
) -> float:
    """Fixed scan parameters resolve as: experiment flag > [noise]/--noise
    input > the experiment's own default."""
    if option_value is not None:
        return option_value
    if settings.noise_audit.get("route", {}).get(param, "default") != "default":
        return getattr(settings.noise, param)
    return default


def cmd_braid(args: argparse.Namespace) -> int:
    settings = _resolve(args, "braid")
    name = settings.options["class"]
    p2 = _noise_fallback(settings, settings.options["p2"], "p2", 0.1)
    theta = _noise_fallback(settings, settings.options["theta"], "theta", 0.0)
    grid = settings.options["grid"]
    p1_grid = np.linspace(0.0, 0.2, 21) if grid is None else np.asarray(grid, float)
    pa_grid = p1_grid.copy()
    if p1_grid.size == 0:
        raise ConfigError("braid grid must be nonempty")
    for extreme in (p1_grid.min(), p1_grid.max()):
        _validate_noise_grid(p1=float(extreme), p_a=float(extreme), p2=p2, theta=theta)

    start = time.perf_counter()
    tasks = [
        (name, float(p1), float(pa), p2, theta) for p1 in p1_grid for pa in pa_grid
    ]
    values = _ordered_map(_braid_point, tasks, settings.workers)
    fidelity = np.asarray(values, dtype=float).reshape(p1_grid.size, pa_grid.size)
    _require_values("fidelity", fidelity, 0.0, 1.0)
    wall = time.perf_counter() - start

    scan = braiding.FidelityScan(
        name=name, p1_grid=p1_grid, pa_grid=pa_grid, p2=p2, theta=theta,
        fidelity=fidelity,
    )
    print(f"class = {name}")
    print(f"points = {fidelity.size}")
    print(f"fidelity(origin) = {fidelity[0, 0]:.9g}")
    print(f"fidelity(min) = {fidelity.min():.9g}")

    checks = _maybe_check(settings)
    summary = {
        "class": name,
        "p2": p2,
        "theta": theta,
        "fidelity_origin": fidelity[0, 0],
        "fidelity_min": fidelity.min(),
    }
    _write_outputs(
        settings, {f"braid_{name}.csv": braiding.scan_to_csv(scan)}, summary, wall,
        checks,
    )
    return _verdict(checks)


def cmd_qed(args: argparse.Namespace) -> int:
    settings = _resolve(args, "qed")
    pa = _noise_fallback(settings, settings.options["pa"], "p_a", 0.01)
    theta = _noise_fallback(settings, settings.options["theta"], "theta", 0.0)
    rounds = settings.options["rounds"]
    grid = settings.options["scan"]
    p1_grid = np.logspace(-4, -1, 25) if grid is None else np.asarray(grid, float)
    p2_grid = p1_grid.copy()
    if p1_grid.size == 0:
        raise ConfigError("qed scan grid must be nonempty")
    for extreme in (p1_grid.min(), p1_grid.max()):
        _validate_noise_grid(p1=float(extreme), p2=float(extreme), p_a=pa, theta=theta)
    try:
        qed.DecayExperimentSpec("physical", "XX", rounds, NoiseParams())
    except ValueError as exc:
        raise ConfigError(f"option 'rounds': {exc}") from exc

    start = time.perf_counter()
    tasks = [
        (pa, float(p1), float(p2), theta, tuple(rounds))
        for p1 in p1_grid
        for p2 in p2_grid
    ]
    values = _ordered_map(_qed_point, tasks, settings.workers)
    stacked = np.asarray(values, dtype=float).reshape(p1_grid.size, p2_grid.size, 5)
    scan = qed.ImprovementScan(
        p1_grid=p1_grid,
        p2_grid=p2_grid,
        p_a=pa,
        theta=theta,
        lambda_avg=stacked[:, :, 0].copy(),
        lambda_x=stacked[:, :, 1].copy(),
        lambda_z=stacked[:, :, 2].copy(),
        accept_phys=stacked[:, :, 3].copy(),
        accept_log=stacked[:, :, 4].copy(),
    )
    for label, arr in (
        ("lambda", scan.lambda_avg),
        ("lambda_x", scan.lambda_x),
        ("lambda_z", scan.lambda_z),
    ):
        if np.isnan(arr).any():
            i, j = map(int, np.argwhere(np.isnan(arr))[0])
            raise NumericalError(
                f"{label} is NaN at p1={p1_grid[i]:.6g}, p2={p2_grid[j]:.6g}"
            )
    _require_values("accept_phys", scan.accept_phys, 0.0, 1.0)
    _require_values("accept_log", scan.accept_log, 0.0, 1.0)
    wall = time.perf_counter() - start

    contour = scan.contour("avg", 1.0)
    improving = int(np.sum(scan.lambda_avg > 1.0))
    best = scan.best_p1("avg")
    print(f"points = {scan.lambda_avg.size}")
    print(f"lambda(max) = {np.max(scan.lambda_avg):.9g}")
    print(f"improving_points = {improving}")
    if best is not None:
        print(f"best_p1 = {best[0]:.9g} (max admissible p2 = {best[1]:.9g})")

    checks = _maybe_check(settings)
    summary = {
        "p_a": pa,
        "theta": theta,
        "rounds": list(rounds),
        "lambda_max": float(np.max(scan.lambda_avg)),
        "improving_points": improving,
        "best_p1": list(best) if best is not None else None,
    }
    _write_outputs(
        settings,
        {
            "qed_scan.csv": qed.scan_to_csv(scan),
            "qed_contour.csv": qed.contour_to_csv(contour),
        },
        summary,
        wall,
        checks,
    )
    return _verdict(checks)


def cmd_lifetime(args: argparse.Namespace) -> int:
    settings = _resolve(args, "lifetime")
    basis = settings.options["basis"]
    steps = settings.options["idle_steps"]
    start = time.perf_counter()
    try:
        result = benchmarking.lifetime_experiment(basis, steps, settings.noise)
    except ValueError as exc:
        raise ConfigError(f"option 'idle_steps': {exc}") from exc
    if math.isnan(result.decay_rate):
        detail = "; ".join(result.flags) or "decay fit returned NaN"
        raise NumericalError(f"decay rate is NaN ({detail})")
    _require_values("agreement", result.agreement, 0.0, 1.0)
    wall = time.perf_counter() - start

    print(f"basis = {basis}")
    print(f"decay_rate = {result.decay_rate:.9g}")
    print(f"flip_rate = {result.flip_rate:.9g}")
    print(f"intercept = {result.intercept:.9g}")
    for flag in result.flags:
        print(f"flag: {flag}")

    rows = ["idle_steps,agreement,contrast"]
    for n, agree, contrast in zip(result.idle_steps, result.agreement, result.contrast):
        rows.append(f"{n},{agree:.12g},{contrast:.12g}")
    csv_text = "\n".join(rows) + "\n"
    report = {
        "basis": basis,
        "idle_steps": list(result.idle_steps),
        "decay_rate": result.decay_rate,
        "flip_rate": result.flip_rate,
        "intercept": result.intercept,
        "residual": result.residual,
        "flags": list(result.flags),
    }
    checks = _maybe_check(settings)
    summary = {
        "basis": basis,
        "decay_rate": result.decay_rate,
        "flip_rate": result.flip_rate,
        "flags": list(result.flags),
    }
    _write_outputs(
        settings,
        {
            "lifetime.csv": csv_text,
            "lifetime.json": json.dumps(_jsonable(report), indent=2) + "\n",
        },
        summary,
        wall,
        checks,
    )
    return _verdict(checks)


def cmd_tgate(args: argparse.Namespace) -> int:
    settings = _resolve(args, "tgate")
    phi = settings.options["phi"]
    deltas = settings.options["delta"]
    start = time.perf_counter()
    plus = np.full((2, 2), 0.5, dtype=complex)
    target = timed_coupling_rotation("Z", phi).apply_dense(plus)
    fidelities = []
    for delta in deltas:
        actual = timed_coupling_rotation("Z", phi + delta).apply_dense(plus)
        fidelities.append(float(np.real(np.trace(target @ actual))))
    _require_values("fidelity", fidelities, 0.0, 1.0, tol=1e-12)
    wall = time.perf_counter() - start

    print(f"phi = {phi:.9g}")
    for delta, fid in zip(deltas, fidelities):
        print(f"fidelity(delta={delta:.9g}) = {fid:.12g}")

    report = {
        "phi": phi,
        "axis": "Z",
        "points": [
            {"delta": d, "fidelity": f} for d, f in zip(deltas, fidelities)
        ],
    }
    checks = _maybe_check(settings)
    summary = {"phi": phi, "fidelity_min": min(fidelities)}
    _write_outputs(
        settings,
        {"tgate.json": json.dumps(_jsonable(report), indent=2) + "\n"},
        summary,
        wall,
        checks,
    )
    return _verdict(checks)


def cmd_derive_noise(args: argparse.Namespace) -> int:
    settings = _resolve(args, "derive-noise")
    start = time.perf_counter()
    noise = settings.noise
    routes = settings.noise_audit.get("route", {})
    for param in ("p_a", "p1", "p2", "theta"):
        if routes.get(param) == "default":
            print(
                f"note: {param} not derivable from the given inputs; "
                "defaulted to 0",
                file=sys.stderr,
            )
    print(f"p_a = {noise.p_a:.12g} (route: {routes.get('p_a', '?')})")
    print(f"p1 = {noise.p1:.12g} (route: {routes.get('p1', '?')})")
    print(f"p2 = {noise.p2:.12g} (route: {routes.get('p2', '?')})")
    print(f"theta = {noise.theta:.12g} (route: {routes.get('theta', '?')})")
    wall = time.perf_counter() - start

    report = {
        "noise": {
            "p_a": noise.p_a,
            "p1": noise.p1,
            "p2": noise.p2,
            "theta": noise.theta,
        },
        "inputs": settings.noise_inputs,
        "audit": settings.noise_audit,
    }
    checks = _maybe_check(settings)
    _write_outputs(
        settings,
        {"derived_noise.json": json.dumps(_jsonable(report), indent=2) + "\n"},
        report["noise"],
        wall,
        checks,
    )
    return _verdict(checks)


def cmd_check(args: argparse.Namespace) -> int:
    results = run_checks(None)
    if args.out is not None:
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "check_report.json").write_text(
                json.dumps({"version": __version__, "checks": results}, indent=2)
                + "\n",
                encoding="utf-8",
            )
        except OSError as exc:
            raise ConfigError(f"cannot write outputs to {out}: {exc}") from exc
    failed = sum(not r["passed"] for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 3 if failed else 0


# ---------------------------------------------------------------------------
# Embedded regression battery
# ---------------------------------------------------------------------------


def _expect(label: str, got: float, want: float, tol: float, rel: bool = False) -> None:
    close = (
        math.isclose(got, want, rel_tol=tol, abs_tol=0.0)
        if rel
        else math.isclose(got, want, rel_tol=0.0, abs_tol=tol)
    )
    assert close, f"{label}: got {got!r}, want {want!r} (tol {tol:g})"


def _check_mbqb_randomizing() -> None:
    m = benchmarking.benchmark_metrics(benchmarking.randomizing_instruments())
    _expect("err_a", m.err_a, 0.5, 1e-9)
    _expect("err_b", m.err_b, 0.0, 1e-9)


def _check_mbqb_readout_flip() -> None:
    m = benchmarking.benchmark_metrics(benchmarking.readout_flip_instruments(0.1))
    _expect("err_a", m.err_a, 0.18, 1e-9)
    _expect("err_b", m.err_b, 0.0, 1e-9)


def _check_mbqb_identical() -> None:
    m = benchmarking.benchmark_metrics(benchmarking.identical_instruments())
    _expect("err_a", m.err_a, 0.0, 1e-9)
    _expect("err_b", m.err_b, 0.5, 1e-9)


def _check_mbqb_device() -> None:
    m = benchmarking.benchmark_metrics(NoiseParams(p_a=0.05))
    _expect("err_a", m.err_a, 0.095, 1e-9)
    _expect("err_b", m.err_b, 0.0, 1e-9)


def _check_lifetime_flip_rate() -> None:
    result = benchmarking.lifetime_experiment("Z", (0, 2, 4), NoiseParams(p1=0.03))
    _expect("flip_rate", result.flip_rate, 0.02, 1e-9, rel=True)
    assert not result.flags, f"unexpected fit flags: {result.flags}"


def _check_braid_sequences() -> None:
    for name in braiding.CLIFFORD_CLASSES:
        report = braiding.verify_sequence_identity(name)
        assert report.passed, f"{name}: sequence identity failed"
        assert report.max_deviation < 1e-12, (
            f"{name}: deviation {report.max_deviation:g}"
        )


def _check_braid_noiseless() -> None:
    for name in braiding.CLIFFORD_CLASSES:
        fid = braiding.average_class_fidelity(name)
        _expect(f"fidelity[{name}]", fid, 1.0, 1e-10)


def _check_braid_pin() -> None:
    fid = braiding.average_class_fidelity(
        "S", NoiseParams(p_a=0.02, p1=0.05, p2=0.1)
    )
    _expect("fidelity[S]", fid, 0.7889412158951682, 1e-9, rel=True)


def _check_qed_pin() -> None:
    metrics, _ = qed.improvement_point(NoiseParams(p_a=0.01, p1=0.005, p2=0.0005))
    _expect("lambda_avg", metrics.lambda_avg, 3.305454741264978, 1e-9, rel=True)
    _expect("lambda_x", metrics.lambda_x, 3.0966384948588646, 1e-9, rel=True)
    _expect("lambda_z", metrics.lambda_z, 822.886764894882, 1e-9, rel=True)


def _check_repcode_table() -> None:
    def expectation(ensemble, letters: str) -> float:
        vec = ensemble.sum_pauli_vec()
        return float(vec[PauliString(letters).index] / vec[0])

    bell = qed.prepare_repcode_state("XX", "physical")
    bell.apply_pauli("ZI")
    _expect("bell <ZZ>", expectation(bell, "ZZ"), 1.0, 1e-10)
    _expect("bell <ZI>", expectation(bell, "ZI"), 0.0, 1e-10)
    _expect("bell <XX>", expectation(bell, "XX"), -1.0, 1e-10)

    zeros = qed.prepare_repcode_state("ZZ", "physical")
    zeros.apply_pauli("XX")
    _expect("zeros <ZZ>", expectation(zeros, "ZZ"), 1.0, 1e-10)
    _expect("zeros <ZI>", expectation(zeros, "ZI"), -1.0, 1e-10)
    _expect("zeros <XX>", expectation(zeros, "XX"), 0.0, 1e-10)


def _check_noise_anchors() -> None:
    params, _ = derive_noise(
        {
            "snr": 3.7,
            "delta_over_kT": 12,
            "L_over_xi": 20,
            "delta_eV": 50e-6,
            "tau_elph_s": 50e-9,
            "tau_meas_s": 1e-6,
        }
    )
    _expect("p_a", params.p_a, 1.0779973347738823e-4, 1e-9, rel=True)
    _expect("p1", params.p1, 9.21575228300664e-5, 1e-9, rel=True)
    _expect("theta", params.theta, 1.5657218019451006e-4, 1e-9, rel=True)
    _expect("p2", params.p2, 0.0, 0.0)


def _check_tgate() -> None:
    _expect("fidelity(0)", t_state_fidelity(0.0), 1.0, 1e-12)
    for delta in (0.05, 0.1):
        _expect(
            f"fidelity({delta})",
            t_state_fidelity(delta),
            1.0 - math.sin(delta) ** 2,
            1e-10,
        )
    identity_dev = float(
        np.max(np.abs(timed_coupling_rotation("Z", 0.0).matrix - np.eye(4)))
    )
    _expect("zero-angle deviation", identity_dev, 0.0, 1e-14)


def _check_trace_conservation() -> None:
    builder = CircuitBuilder(3)
    builder.meas1(0, "X")
    builder.end_step()
    builder.meas2(1, 2, "ZZ")
    builder.end_step()
    builder.meas1(2, "Z")
    builder.end_step()
    circuit = builder.build()
    noise = NoiseParams(p_a=0.02, p1=0.01, p2=0.03, theta=0.05)
    initial = TrajectoryEnsemble.from_product_state(["0", "+", "1"])
    result = run_circuit(circuit, noise, initial, keep_slots="all")
    _expect("total trace", result.acceptance, 1.0, 1e-12)


_CHECKS: tuple = (
    ("mbqb-randomizing-metrics", _check_mbqb_randomizing),
    ("mbqb-readout-flip-0.1", _check_mbqb_readout_flip),
    ("mbqb-identical-instruments", _check_mbqb_identical),
    ("mbqb-device-pa-0.05", _check_mbqb_device),
    ("lifetime-flip-rate", _check_lifetime_flip_rate),
    ("braid-sequence-identities", _check_braid_sequences),
    ("braid-identity-noiseless", _check_braid_noiseless),
    ("braid-fidelity-pin", _check_braid_pin),
    ("qed-lambda-pin", _check_qed_pin),
    ("repcode-error-table", _check_repcode_table),
    ("noise-derivation-anchors", _check_noise_anchors),
    ("tgate-t-state", _check_tgate),
    ("simulator-trace-conservation", _check_trace_conservation),
)

_CHECK_GROUPS: dict = {
    "mbqb": (
        "mbqb-randomizing-metrics",
        "mbqb-readout-flip-0.1",
        "mbqb-identical-instruments",
        "mbqb-device-pa-0.05",
    ),
    "braid": (
        "braid-sequence-identities",
        "braid-identity-noiseless",
        "braid-fidelity-pin",
    ),
    "qed": (
        "qed-lambda-pin",
        "repcode-error-table",
        "simulator-trace-conservation",
    ),
    "lifetime": ("lifetime-flip-rate",),
    "tgate": ("tgate-t-state",),
    "derive-noise": ("noise-derivation-anchors",),
}


def run_checks(names: "tuple | None") -> list:
    """Run the embedded regression battery (all checks when ``names`` is
    None) and print one PASS/FAIL line per check."""
    selected = (
        _CHECKS if names is None else tuple(c for c in _CHECKS if c[0] in names)
    )
    results = []
    for name, func in selected:
        try:
            func()
            passed, detail = True, ""
        except AssertionError as exc:
            passed, detail = False, str(exc)
        except Exception as exc:  # a crashed check is a failed check
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        results.append({"name": name, "passed": passed, "detail": detail})
        line = f"{'PASS' if passed else 'FAIL'} {name}"
        print(line if passed else f"{line}: {detail}")
    return results


# ---------------------------------------------------------------------------
# Argument parsing and entry point
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """Argument parser that reports errors as ConfigError (exit code 1)
    instead of exiting the process directly."""

    def error(self, message: str):
        raise ConfigError(message)


_COMMANDS = {
    "mbqb": cmd_mbqb,
    "braid": cmd_braid,
    "qed": cmd_qed,
    "lifetime": cmd_lifetime,
    "tgate": cmd_tgate,
    "derive-noise": cmd_derive_noise,
}

_SUBCOMMAND_HELP = {
    "mbqb": "measurement benchmarking metrics (err_a, err_b)",
    "braid": "average-fidelity scan for a braided Clifford class",
    "qed": "ladder-code logical-improvement scan",
    "lifetime": "idle-lifetime decay experiment",
    "tgate": "timed-coupling magic-state fidelity under phase error",
    "derive-noise": "resolve physical parameters into noise parameters",
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tetronsim", description=__doc__.splitlines()[0])
    parser.add_argument(
        "--version", action="version", version=f"tetronsim {__version__}"
    )
    subparsers = parser.add_subparsers(
        dest="command", required=True, parser_class=_Parser
    )

    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI configuration file")
    common.add_argument(
        "--noise",
        action="append",
        metavar="KEY=VALUE",
        help="noise or physical parameter (repeatable; overrides [noise])",
    )
    common.add_argument("--seed", metavar="U64", help="base random seed")
    common.add_argument(
        "--workers", metavar="N", help="process count for grid sweeps"
    )
    common.add_argument("--out", metavar="DIR", help="artifact output directory")
    common.add_argument(
        "--check",
        action="store_true",
        help="also run this module's embedded regression checks",
    )
    mode_group = common.add_mutually_exclusive_group()
    mode_group.add_argument(
        "--exact", action="store_true", help="exact trajectory statistics"
    )
    mode_group.add_argument(
        "--shots", metavar="N", help="sampled statistics with N shots"
    )

    for name, func in _COMMANDS.items():
        sub = subparsers.add_parser(
            name, parents=[common], help=_SUBCOMMAND_HELP[name]
        )
        for key, opt in _OPTIONS[name].items():
            sub.add_argument(
                "--" + key.replace("_", "-"),
                dest="opt_" + key.replace("-", "_"),
                metavar="VALUE",
                choices=opt.choices,
                help=opt.help,
            )
        sub.set_defaults(func=func)

    check = subparsers.add_parser(
        "check", help="run the full embedded regression battery"
    )
    check.add_argument("--out", metavar="DIR", help="directory for check_report.json")
    check.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:  # --help / --version
        code = exc.code if isinstance(exc.code, int) else 0
        return code
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical invariant failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
