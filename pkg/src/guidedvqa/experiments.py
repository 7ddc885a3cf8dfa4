"""Seeded experiment orchestration and result-file emission.

Each experiment is driven by a flat JSON config (CLI flags override file
values) and writes CSV/JSON results plus a manifest into the output
directory.  Reruns with an identical config and seed produce byte-identical
CSV and dataset bodies: all numerically sensitive reductions use fixed
evaluation order and the BLAS/LAPACK thread pools are pinned to one thread
for the duration of a run, so ambient thread-count settings cannot perturb
results.  Wallclock timing lives in the manifest, which is excluded from
the byte-identity contract; the trace CSV's wallclock column is left blank
unless ``deterministic_output`` is disabled.

Exit-code mapping used by the CLI: ConfigError -> 2, CapacityError -> 3,
NumericalError -> 4.
"""
from __future__ import annotations

import hashlib
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy
from threadpoolctl import threadpool_limits

from . import __version__
from .ansatz import build_ala, init_params, save_params
from .heisenberg import (
    DENSE_SOLVER_CAP,
    CapacityError,
    generate_dataset,
    make_dataset,
    save_dataset,
    square_lattice,
    z_sum_observable,
)
from .kernel import (
    bound_diagnostics,
    concentration_stats,
    kernel_from_gradients,
    kernel_spectrum,
    lazy_drift,
    linearized_trajectory,
    loss_gap,
)
from .training import (
    TrainingConfig,
    generalization_error,
    predictions,
    resolve_eta,
    resolve_kappa,
    train,
    values_and_gradient_matrix,
)

EXPERIMENTS = (
    "gen-data",
    "train",
    "kernel-concentration",
    "lazy-training",
    "lin-vs-true",
    "generalization",
)


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


class NumericalError(RuntimeError):
    """A run produced non-finite values and was aborted."""


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    out: str = "out"
    rows: int = 2
    cols: int = 4
    m: int = 4
    r: int = 2
    L: int = 2
    delta: float | str = "auto"
    kappa: float | str = "auto"
    eta: float | str = "auto"
    eta_scale: float = 1.0
    gamma: float = 0.05
    T: int = 100
    m_train: int = 80
    m_test: int = 20
    gradient_method: str = "adjoint"
    ns: tuple = (4, 8, 12)
    trials: int = 100
    m_values: tuple = (10, 20, 40)
    n_seeds: int = 10
    t_cap: int = 150
    kernel_stride: int | None = None
    param_stride: int | None = None
    include_amplitudes: bool = True
    deterministic_output: bool = True
    drift_m_train: int = 4
    solver_cap: int = DENSE_SOLVER_CAP

    @property
    def n(self) -> int:
        return self.rows * self.cols

    def resolved_delta(self, n: int | None = None) -> float:
        if self.delta == "auto":
            return 1.0 / (n or self.n) ** 2
        return float(self.delta)

    def to_dict(self) -> dict:
        doc = {}
        for name in _FIELD_TYPES:
            value = getattr(self, name)
            doc[name] = list(value) if isinstance(value, tuple) else value
        return doc


# Per-experiment defaults layered over the dataclass defaults; the
# concentration and drift sweeps use the narrow one-layer ansatz shape.
_EXPERIMENT_DEFAULTS = {
    "kernel-concentration": {"m": 2, "L": 1},
    "lazy-training": {"m": 2, "L": 1},
}

_FIELD_TYPES = {
    "experiment": str,
    "seed": int,
    "out": str,
    "rows": int,
    "cols": int,
    "m": int,
    "r": int,
    "L": int,
    "delta": (float, str),
    "kappa": (float, str),
    "eta": (float, str),
    "eta_scale": float,
    "gamma": float,
    "T": int,
    "m_train": int,
    "m_test": int,
    "gradient_method": str,
    "ns": tuple,
    "trials": int,
    "m_values": tuple,
    "n_seeds": int,
    "t_cap": int,
    "kernel_stride": (int, type(None)),
    "param_stride": (int, type(None)),
    "include_amplitudes": bool,
    "deterministic_output": bool,
    "drift_m_train": int,
    "solver_cap": int,
}


def load_config_file(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}"
        ) from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return doc


def apply_overrides(doc: dict, overrides) -> dict:
    out = dict(doc)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        key, raw = item.split("=", 1)
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def build_config(doc: dict) -> ExperimentConfig:
    """Validate a raw config dict field by field; fail fast, name the field."""
    if "experiment" not in doc:
        raise ConfigError("missing required field 'experiment'")
    experiment = doc["experiment"]
    if experiment not in EXPERIMENTS:
        raise ConfigError(
            f"field 'experiment': unknown experiment {experiment!r}; "
            f"choose one of {', '.join(EXPERIMENTS)}"
        )
    if "seed" not in doc or doc["seed"] is None:
        raise ConfigError("missing required field 'seed'")
    merged = dict(_EXPERIMENT_DEFAULTS.get(experiment, {}))
    merged.update(doc)
    unknown = set(merged) - set(_FIELD_TYPES)
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(sorted(unknown))}")
    kwargs = {}
    for name, value in merged.items():
        expected = _FIELD_TYPES[name]
        if expected is tuple and isinstance(value, list):
            value = tuple(value)
        if expected is float and isinstance(value, int):
            value = float(value)
        if expected == (float, str) and isinstance(value, int):
            value = float(value)
        kwargs[name] = value
    cfg = ExperimentConfig(**kwargs)
    _validate_semantics(cfg)
    return cfg


def _validate_semantics(cfg: ExperimentConfig) -> None:
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool):
        raise ConfigError(f"field 'seed': expected an integer, got {cfg.seed!r}")
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError(f"field 'seed': {cfg.seed} outside the 64-bit range")
    if cfg.rows < 1 or cfg.cols < 1:
        raise ConfigError(f"field 'rows'/'cols': invalid lattice {cfg.rows}x{cfg.cols}")
    if cfg.m % 2 != 0 or cfg.m < 2:
        raise ConfigError(
            f"field 'm': block width {cfg.m} must be even (even-numbered layers "
            f"start and end with half-width blocks of m/2 qubits)"
        )
    if cfg.r < 1:
        raise ConfigError(f"field 'r': sublayer count must be >= 1, got {cfg.r}")
    if cfg.L < 1:
        raise ConfigError(f"field 'L': layer count must be >= 1, got {cfg.L}")
    if cfg.T < 0:
        raise ConfigError(f"field 'T': iteration count must be >= 0, got {cfg.T}")
    if cfg.m_train < 1 or cfg.m_test < 1:
        raise ConfigError(
            f"field 'm_train'/'m_test': need >= 1 sample each, "
            f"got {cfg.m_train}/{cfg.m_test}"
        )
    if cfg.delta != "auto" and not 0.0 <= float(cfg.delta) < 1.0:
        raise ConfigError(f"field 'delta': must be 'auto' or in [0, 1), got {cfg.delta}")
    if cfg.kappa != "auto" and not 0.0 < float(cfg.kappa) <= 1.0:
        raise ConfigError(f"field 'kappa': must be 'auto' or in (0, 1], got {cfg.kappa}")
    if isinstance(cfg.eta, str):
        if cfg.eta not in ("auto", "max"):
            raise ConfigError(
                f"field 'eta': must be a number, 'auto' or 'max', got {cfg.eta!r}"
            )
    elif float(cfg.eta) <= 0:
        raise ConfigError(f"field 'eta': must be positive, got {cfg.eta}")
    if not 0.0 < cfg.gamma < 1.0:
        raise ConfigError(f"field 'gamma': must be in (0, 1), got {cfg.gamma}")
    if cfg.gradient_method not in ("adjoint", "parameter_shift"):
        raise ConfigError(
            f"field 'gradient_method': unknown method {cfg.gradient_method!r}"
        )
    if cfg.experiment in ("kernel-concentration", "lazy-training"):
        for n in cfg.ns:
            if n % cfg.rows != 0:
                raise ConfigError(f"field 'ns': n={n} not divisible by rows={cfg.rows}")
            if n % cfg.m != 0:
                raise ConfigError(f"field 'ns': block width m={cfg.m} must divide n={n}")
            if n > cfg.solver_cap:
                raise CapacityError(
                    f"field 'ns': n={n} exceeds dense-solver cap {cfg.solver_cap}"
                )
    else:
        if cfg.n % cfg.m != 0:
            raise ConfigError(
                f"field 'm': block width {cfg.m} must divide n={cfg.n} "
                f"(lattice {cfg.rows}x{cfg.cols})"
            )
        if cfg.n > cfg.solver_cap:
            raise CapacityError(
                f"lattice {cfg.rows}x{cfg.cols} gives n={cfg.n}, above the "
                f"dense-solver cap {cfg.solver_cap}"
            )
    if cfg.trials < 1:
        raise ConfigError(f"field 'trials': must be >= 1, got {cfg.trials}")
    if cfg.n_seeds < 1:
        raise ConfigError(f"field 'n_seeds': must be >= 1, got {cfg.n_seeds}")
    if cfg.t_cap < 1:
        raise ConfigError(f"field 't_cap': must be >= 1, got {cfg.t_cap}")
    if cfg.kernel_stride is not None and cfg.kernel_stride < 1:
        raise ConfigError(f"field 'kernel_stride': must be >= 1 or null")
    if cfg.param_stride is not None and cfg.param_stride < 1:
        raise ConfigError(f"field 'param_stride': must be >= 1 or null")
    if cfg.drift_m_train < 2:
        raise ConfigError(f"field 'drift_m_train': need >= 2 samples for a kernel")


def validate_report(cfg: ExperimentConfig) -> list[str]:
    """Human-readable resolution of every auto rule, without any compute."""
    lines = [f"experiment: {cfg.experiment}", f"seed: {cfg.seed}"]
    if cfg.experiment in ("kernel-concentration", "lazy-training"):
        lines.append(f"system sizes: {list(cfg.ns)} (rows={cfg.rows})")
    else:
        lines.append(f"lattice: {cfg.rows}x{cfg.cols} (n={cfg.n})")
    lines.append(f"ansatz: m={cfg.m}, r={cfg.r}, L={cfg.L}")
    if cfg.delta == "auto":
        lines.append(f"delta: auto -> 1/n^2 = {cfg.resolved_delta()!r} at n={cfg.n}")
    else:
        lines.append(f"delta: {cfg.delta!r}")
    if cfg.kappa == "auto":
        kappa = cfg.resolved_delta() * np.sqrt(cfg.gamma) / cfg.n
        lines.append(
            f"kappa: auto -> delta*sqrt(gamma)/n = {float(kappa)!r} at n={cfg.n}"
        )
    else:
        lines.append(f"kappa: {cfg.kappa!r}")
    if cfg.eta == "auto":
        lines.append(
            "eta: auto -> lambda_min(K0)/M^2 clamped to [1e-06, 1/lambda_max(K0)]"
        )
    elif cfg.eta == "max":
        lines.append(f"eta: max -> {cfg.eta_scale!r}/lambda_max(K0)")
    else:
        lines.append(f"eta: {float(cfg.eta)!r}")
    lines.append(f"gamma: {cfg.gamma!r}")
    lines.append("ok")
    return lines


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


@dataclass
class RunResult:
    outdir: Path
    files: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)


def run(cfg: ExperimentConfig) -> RunResult:
    """Execute one experiment; deterministic for a fixed config and seed."""
    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    result = RunResult(outdir)
    runner = {
        "gen-data": _run_gen_data,
        "train": _run_train,
        "kernel-concentration": _run_concentration,
        "lazy-training": _run_lazy_training,
        "lin-vs-true": _run_lin_vs_true,
        "generalization": _run_generalization,
    }[cfg.experiment]
    with threadpool_limits(limits=1):
        runner(cfg, outdir, result)
    wallclock_ms = (time.perf_counter() - start) * 1000.0
    _write_manifest(cfg, outdir, result, wallclock_ms)
    return result


def _write_manifest(cfg, outdir, result, wallclock_ms) -> None:
    config_doc = cfg.to_dict()
    canonical = json.dumps(config_doc, sort_keys=True).encode()
    manifest = {
        "config": config_doc,
        "config_sha256": hashlib.sha256(canonical).hexdigest(),
        "package_version": __version__,
        "python_version": sys.version.split()[0],
        "numpy_version": np.__version__,
        "scipy_version": scipy.__version__,
        "wallclock_ms": wallclock_ms,  # excluded from the byte-identity contract
        "files": sorted(result.files),
        "notes": result.notes,
    }
    with open(outdir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _run_gen_data(cfg, outdir, result) -> None:
    lattice = square_lattice(cfg.rows, cfg.cols)
    obs = z_sum_observable(cfg.n)
    delta = cfg.resolved_delta()
    train_ds, test_ds = generate_dataset(
        lattice, obs, cfg.m_train, cfg.m_test, delta, cfg.seed, cap=cfg.solver_cap
    )
    path = outdir / "dataset.json"
    save_dataset(path, train_ds, test_ds, include_amplitudes=cfg.include_amplitudes)
    result.files.append(path.name)
    result.notes["samples"] = cfg.m_train + cfg.m_test


def _training_config(cfg, eta=None, T=None) -> TrainingConfig:
    return TrainingConfig(
        eta=cfg.eta if eta is None else eta,
        T=cfg.T if T is None else T,
        kappa=cfg.kappa,
        gamma=cfg.gamma,
        seed=cfg.seed,
        gradient_method=cfg.gradient_method,
        eta_scale=cfg.eta_scale,
        kernel_stride=cfg.kernel_stride,
        param_stride=cfg.param_stride,
    )


def _write_trace_csv(cfg, outdir, result, trace, name="trace.csv") -> None:
    rows = []
    for t in range(len(trace.losses)):
        wallclock = None if cfg.deterministic_output else trace.wallclock_ms[t]
        rows.append((t, trace.losses[t], trace.grad_norms[t], trace.eta, wallclock))
    path = outdir / name
    write_csv(path, ("iter", "loss", "grad_norm", "eta", "wallclock_ms"), rows)
    result.files.append(path.name)


def _run_train(cfg, outdir, result) -> None:
    lattice = square_lattice(cfg.rows, cfg.cols)
    obs = z_sum_observable(cfg.n)
    delta = cfg.resolved_delta()
    train_ds = make_dataset(lattice, obs, cfg.m_train, delta, cfg.seed, cap=cfg.solver_cap)
    circuit = build_ala(cfg.n, cfg.m, cfg.r, cfg.L)
    trace = train(circuit, train_ds, _training_config(cfg))
    _write_trace_csv(cfg, outdir, result, trace)
    for t, params in sorted(trace.param_snapshots.items()):
        path = outdir / f"params_t{t}.json"
        save_params(path, circuit, params)
        result.files.append(path.name)
    result.notes["eta"] = trace.eta
    result.notes["retried"] = trace.retried
    if trace.aborted:
        raise NumericalError(trace.abort_reason)


def _run_concentration(cfg, outdir, result) -> None:
    points = concentration_stats(
        cfg.ns,
        cfg.trials,
        cfg.seed,
        rows=cfg.rows,
        block_m=cfg.m,
        r=cfg.r,
        L=cfg.L,
        delta=cfg.delta,
        gradient_method=cfg.gradient_method,
        cap=cfg.solver_cap,
    )
    path = outdir / "concentration.csv"
    write_csv(
        path,
        ("n", "trial_count", "variance"),
        [(p.n, p.trials, p.variance) for p in points],
    )
    result.files.append(path.name)
    result.notes["variances"] = {str(p.n): p.variance for p in points}


def _drift_setup(cfg, n):
    lattice = square_lattice(cfg.rows, n // cfg.rows)
    obs = z_sum_observable(n)
    delta = cfg.resolved_delta(n)
    ds = make_dataset(lattice, obs, cfg.drift_m_train, delta, cfg.seed, cap=cfg.solver_cap)
    circuit = build_ala(n, cfg.m, cfg.r, cfg.L)
    return ds, circuit, delta


def _run_lazy_training(cfg, outdir, result) -> None:
    # One shared learning rate across system sizes so the drift comparison
    # is not confounded by per-n eta rules.
    setups = {n: _drift_setup(cfg, n) for n in cfg.ns}
    if isinstance(cfg.eta, str):
        etas = []
        for n, (ds, circuit, delta) in setups.items():
            base = _training_config(cfg)
            kappa = resolve_kappa(base, circuit, delta)
            theta0 = init_params(circuit, kappa, cfg.seed)
            _, G0 = values_and_gradient_matrix(
                circuit, theta0, ds, cfg.gradient_method
            )
            etas.append(resolve_eta(base, kernel_from_gradients(G0, len(ds)).entries))
        eta = min(etas)
    else:
        eta = float(cfg.eta)
    rows = []
    medians = {}
    for n in cfg.ns:
        ds, circuit, _ = setups[n]
        report = lazy_drift(circuit, ds, _training_config(cfg, eta=eta), cfg.T)
        for step in report.steps:
            rows.append(
                (n, step.t, step.minimum, step.q25, step.median, step.q75, step.maximum)
            )
        medians[str(n)] = report.pooled_median
    path = outdir / "drift.csv"
    write_csv(path, ("n", "t", "min", "q25", "median", "q75", "max"), rows)
    result.files.append(path.name)
    result.notes["eta"] = eta
    result.notes["pooled_medians"] = medians


def _run_lin_vs_true(cfg, outdir, result) -> None:
    lattice = square_lattice(cfg.rows, cfg.cols)
    obs = z_sum_observable(cfg.n)
    delta = cfg.resolved_delta()
    train_ds = make_dataset(lattice, obs, cfg.m_train, delta, cfg.seed, cap=cfg.solver_cap)
    circuit = build_ala(cfg.n, cfg.m, cfg.r, cfg.L)
    base = _training_config(cfg)
    kappa = resolve_kappa(base, circuit, delta)
    theta0 = init_params(circuit, kappa, cfg.seed)
    f0, G0 = values_and_gradient_matrix(circuit, theta0, train_ds, cfg.gradient_method)
    k0 = kernel_from_gradients(G0, len(train_ds))
    eta = resolve_eta(base, k0.entries)
    trace = train(
        circuit, train_ds, _training_config(cfg, eta=eta), initial_params=theta0
    )
    lin = linearized_trajectory(k0, f0, train_ds.labels, eta, cfg.T)
    spectrum = kernel_spectrum(k0)
    report = loss_gap(
        trace, lin.losses, spectrum, eta, delta, cfg.n, len(obs.terms)
    )
    gap_path = outdir / "gap.csv"
    write_csv(
        gap_path,
        ("t", "true_loss", "lin_loss", "gap", "envelope"),
        zip(report.ts, report.true_losses, report.lin_losses, report.gaps,
            report.envelope),
    )
    result.files.append(gap_path.name)
    bounds = bound_diagnostics(spectrum, eta, len(train_ds))
    bounds_path = outdir / "bounds.csv"
    write_csv(
        bounds_path,
        ("M", "eta", "lambda_min", "lambda_max", "T_star", "trace_exp", "B1", "B2"),
        [(bounds.m, bounds.eta, bounds.lambda_min, bounds.lambda_max,
          bounds.t_star, bounds.trace_exp, bounds.b1, bounds.b2)],
    )
    result.files.append(bounds_path.name)
    _write_trace_csv(cfg, outdir, result, trace)
    result.notes["eta"] = eta
    result.notes["c_fitted"] = report.c_fitted
    if trace.aborted:
        raise NumericalError(trace.abort_reason)


def _run_generalization(cfg, outdir, result) -> None:
    lattice = square_lattice(cfg.rows, cfg.cols)
    obs = z_sum_observable(cfg.n)
    delta = cfg.resolved_delta()
    circuit = build_ala(cfg.n, cfg.m, cfg.r, cfg.L)
    base = _training_config(cfg)
    kappa = resolve_kappa(base, circuit, delta)
    gen_rows = []
    bound_rows = []
    for m_train in cfg.m_values:
        for rep in range(cfg.n_seeds):
            child = np.random.SeedSequence((cfg.seed, m_train, rep)).generate_state(
                2, dtype=np.uint64
            )
            ds_seed = int(child[0] % 2**63)
            init_seed = int(child[1] % 2**63)
            train_ds, test_ds = generate_dataset(
                lattice, obs, m_train, cfg.m_test, delta, ds_seed, cap=cfg.solver_cap
            )
            theta0 = init_params(circuit, kappa, init_seed)
            _, G0 = values_and_gradient_matrix(
                circuit, theta0, train_ds, cfg.gradient_method
            )
            k0 = kernel_from_gradients(G0, m_train)
            eta = resolve_eta(base, k0.entries)
            bounds = bound_diagnostics(kernel_spectrum(k0), eta, m_train)
            t_used = min(bounds.t_star, cfg.t_cap) if bounds.t_star else min(
                cfg.T, cfg.t_cap
            )
            trace = train(
                circuit,
                train_ds,
                _training_config(cfg, eta=eta, T=t_used),
                initial_params=theta0,
            )
            if trace.aborted:
                raise NumericalError(trace.abort_reason)
            final = trace.final_params
            train_mae = float(
                np.mean(np.abs(predictions(circuit, final, train_ds) - train_ds.labels))
            )
            test_mae = float(
                np.mean(np.abs(predictions(circuit, final, test_ds) - test_ds.labels))
            )
            gen = generalization_error(circuit, final, train_ds, test_ds)
            gen_rows.append(
                (m_train, rep, eta, bounds.lambda_min, bounds.t_star, t_used,
                 train_mae, test_mae, gen)
            )
            bound_rows.append(
                (m_train, eta, bounds.lambda_min, bounds.lambda_max,
                 bounds.t_star, bounds.trace_exp, bounds.b1, bounds.b2)
            )
    gen_path = outdir / "generalization.csv"
    write_csv(
        gen_path,
        ("m_train", "rep", "eta", "lambda_min", "T_star", "T_used",
         "train_mae", "test_mae", "gen_error"),
        gen_rows,
    )
    result.files.append(gen_path.name)
    bounds_path = outdir / "bounds.csv"
    write_csv(
        bounds_path,
        ("M", "eta", "lambda_min", "lambda_max", "T_star", "trace_exp", "B1", "B2"),
        bound_rows,
    )
    result.files.append(bounds_path.name)
    medians = {
        str(m): float(np.median([r[-1] for r in gen_rows if r[0] == m]))
        for m in cfg.m_values
    }
    result.notes["median_gen_error"] = medians
