"""Command-line front end.

Subcommands
-----------
discriminate  run the energy-measurement ensemble, write ``report.json`` and
              ``records.csv`` and print a comparison with the projection
              postulate
martingale    write ``martingale.csv``: per-snapshot ensemble mean of <H> and
              of Var(H) with standard errors
histogram     write ``histogram.csv``: zero-energy outcomes on an
              equal-area (cos theta, phi) grid

Exit codes: 0 success, 1 configuration error, 2 I/O error, 3 some
trajectories failed to collapse (outputs still written without them).
The default worker count is read from ``REDUCTION_LAB_WORKERS``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import experiment as ex
from .qstate import PSI_INITIAL, UP_DOWN, Observable, expectation, s_squared, sigma_1z
from .reduction import (
    ModelError,
    NoCollapseError,
    ReductionModel,
    SimulationParams,
    default_workers,
    martingale_statistics,
    model_energy,
    model_local_spins,
    run_trajectories,
    validate_model,
)
from .noise import trajectory_seeds

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_NO_COLLAPSE = 3

MODELS = ("energy", "local-spins", "custom")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    model: str = "energy"
    custom_generators: str | None = None
    sigma: float = 1.0
    n: int = 10_000
    dt: float = 1e-3
    collapse_tol: float = 1e-10
    max_steps: int = 10_000_000
    seed: int = 0
    snapshots: int = 50
    out_dir: str = "."
    workers: int | None = None
    z_bins: int = 21
    phi_bins: int = 21

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; choose from {', '.join(MODELS)}")
        if (self.model == "custom") != (self.custom_generators is not None):
            raise ConfigError("--custom-generators is required exactly when --model custom")
        if self.n < 1:
            raise ConfigError(f"--n must be >= 1, got {self.n}")
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ConfigError(f"--sigma must be positive, got {self.sigma}")
        if self.z_bins < 1 or self.phi_bins < 1:
            raise ConfigError("histogram bin counts must be >= 1")
        if self.workers is not None and self.workers < 1:
            raise ConfigError(f"--workers must be >= 1, got {self.workers}")
        if not 0 <= self.seed <= 0xFFFF_FFFF_FFFF_FFFF:
            raise ConfigError(f"--seed must be a 64-bit unsigned integer, got {self.seed}")
        try:
            self.params()
        except ValueError as err:
            raise ConfigError(str(err)) from None

    def params(self) -> SimulationParams:
        return SimulationParams(
            dt=self.dt, collapse_tol=self.collapse_tol, max_steps=self.max_steps, snapshot_count=self.snapshots
        )

    def as_report(self) -> dict:
        """Settings that determine the results (no output path, no worker count)."""
        out = asdict(self)
        del out["out_dir"], out["workers"]
        return out


def load_custom_model(path: str | os.PathLike, name: str = "custom") -> ReductionModel:
    """Read ``{"generators": [...], "couplings": [...]}``.

    Each generator is a row-major 4x4 nested list of ``[re, im]`` pairs.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from None
    try:
        gens = []
        for k, raw in enumerate(data["generators"]):
            arr = np.asarray(raw, dtype=float)
            if arr.shape != (4, 4, 2):
                raise ConfigError(f"{path}: generator {k} has shape {arr.shape}, expected (4, 4, 2)")
            gens.append(Observable(arr[..., 0] + 1j * arr[..., 1], name=f"A{k}"))
        model = ReductionModel(tuple(gens), tuple(float(c) for c in data["couplings"]), name=name)
        validate_model(model)
    except (KeyError, TypeError) as err:
        raise ConfigError(f"{path}: expected keys 'generators' and 'couplings' ({err})") from None
    except ValueError as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(f"{path}: {err}") from None
    return model


def build_model(config: RunConfig) -> ReductionModel:
    if config.model == "energy":
        return model_energy(config.sigma)
    if config.model == "local-spins":
        return model_local_spins(config.sigma)
    return load_custom_model(config.custom_generators)


# -- output -----------------------------------------------------------------


def fmt_float(x: float) -> str:
    return format(float(x), ".17g")


def to_json(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON with floats at 17 significant digits; non-finite floats become null."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {to_json(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.number)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(to_json(v) for v in obj) + "]"
        items = [pad + to_json(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(fmt_float(v) if isinstance(v, float) else v for v in row)
    return buf.getvalue()


RECORD_COLUMNS = ["index", "seed", "eigenvalue", "steps", "theta", "phi"] + [
    f"{part}{i}" for i in range(4) for part in ("re", "im")
]


def records_csv(records) -> str:
    rows = []
    for r in records:
        amps = []
        for a in r.final_state.amplitudes:
            amps += [float(a.real), float(a.imag)]
        theta, phi = ("", "") if r.sphere is None else (float(r.sphere.theta), float(r.sphere.phi))
        rows.append([r.index, r.seed, r.eigenvalue, r.steps, theta, phi, *amps])
    return _csv_text(RECORD_COLUMNS, rows)


def histogram_csv(hist: ex.SphereHistogram) -> str:
    return _csv_text(["cos_theta_low", "cos_theta_high", "phi_low", "phi_high", "count"], hist.rows())


def luders_summary(initial=PSI_INITIAL) -> dict:
    """Projection-postulate values of every reported statistic."""
    table = ex.luders_reference(initial)
    zero = next((o for o in table if o.eigenvalue == 0), None)
    return {
        "outcomes": [
            {
                "eigenvalue": o.eigenvalue,
                "probability": o.probability,
                "state": [[float(a.real), float(a.imag)] for a in o.state.amplitudes],
            }
            for o in table
        ],
        "p": abs(zero.state.inner(UP_DOWN)) ** 2 if zero else math.nan,
        "conservation": sum(o.probability * expectation(o.state, sigma_1z()) for o in table),
        "s2": expectation(zero.state, s_squared()) if zero else math.nan,
    }


def report_dict(config: RunConfig, report: ex.EnsembleReport) -> dict:
    return {
        "config": config.as_report(),
        "frequencies": {
            f"{e:+d}" if e else "0": {"value": est.value, "se": est.se} for e, est in report.frequencies.items()
        },
        "p_hat": report.p_hat.value,
        "p_hat_se": report.p_hat.se,
        "conservation": report.conservation.value,
        "conservation_se": report.conservation.se,
        "s2": report.s2.value,
        "s2_se": report.s2.se,
        "n_total": report.n_total,
        "n_degenerate": report.n_degenerate,
        "n_failed": report.n_failed,
        "luders_reference": luders_summary(),
    }


def _g(x: float) -> str:
    return format(x, ".6g")


def summary_table(data: dict) -> str:
    """Plain-text comparison; every number shown is also in ``data``."""
    ref = data["luders_reference"]
    probs = {o["eigenvalue"]: o["probability"] for o in ref["outcomes"]}
    lines = [f"{'statistic':<14}{'simulated':>14}{'std err':>14}{'projection':>14}"]
    for key, est in data["frequencies"].items():
        expected = probs.get(int(key), 0.0)
        lines.append(f"{'P(E=' + key + ')':<14}{_g(est['value']):>14}{_g(est['se']):>14}{_g(expected):>14}")
    for label, key, ref_key in (("p", "p_hat", "p"), ("<Sigma1z>", "conservation", "conservation"), ("<S^2>|E=0", "s2", "s2")):
        se_key = f"{key}_se"
        lines.append(f"{label:<14}{_g(data[key]):>14}{_g(data[se_key]):>14}{_g(ref[ref_key]):>14}")
    lines.append(f"trajectories {data['n_total']}  zero-energy {data['n_degenerate']}  failed {data['n_failed']}")
    return "\n".join(lines)


# -- commands ---------------------------------------------------------------


def _ensemble(config: RunConfig):
    model = build_model(config)
    try:
        records = ex.run_ensemble(model, config.n, config.params(), config.seed, workers=config.workers)
        failed = 0
    except NoCollapseError as err:
        records, failed = err.results, err.n_failed
    return records, failed


def cmd_discriminate(config: RunConfig) -> int:
    records, failed = _ensemble(config)
    data = report_dict(config, ex.summarize(records, n_failed=failed))
    out = Path(config.out_dir)
    write_atomic(out / "report.json", to_json(data) + "\n")
    write_atomic(out / "records.csv", records_csv(records))
    print(summary_table(data))
    return EXIT_NO_COLLAPSE if failed else EXIT_OK


def cmd_martingale(config: RunConfig) -> int:
    """Snapshot statistics over ``max_steps``; unfinished trajectories are expected here."""
    model = build_model(config)
    if config.snapshots < 1:
        raise ConfigError("--snapshots must be >= 1 for the martingale series")
    seeds = trajectory_seeds(config.seed, np.arange(config.n))
    trajectories = run_trajectories(PSI_INITIAL, model, config.params(), seeds, workers=config.workers)
    energy = martingale_statistics(trajectories, "energy")
    var = martingale_statistics(trajectories, "variance")
    rows = [
        [float(t), float(m), float(s), float(v), float(vs)]
        for t, m, s, v, vs in zip(energy.times, energy.mean, energy.se, var.mean, var.se)
    ]
    text = _csv_text(["time", "mean_energy", "mean_energy_se", "mean_variance", "mean_variance_se"], rows)
    write_atomic(Path(config.out_dir) / "martingale.csv", text)
    collapsed = sum(t.collapsed for t in trajectories)
    print(f"{len(trajectories)} trajectories, {collapsed} collapsed by t = {fmt_float(energy.times[-1])}")
    return EXIT_OK


def cmd_histogram(config: RunConfig) -> int:
    records, failed = _ensemble(config)
    try:
        hist = ex.sphere_histogram(records, config.z_bins, config.phi_bins)
    except ex.NoDegenerateOutcomesError:
        hist = ex.SphereHistogram(
            np.linspace(-1.0, 1.0, config.z_bins + 1),
            np.linspace(0.0, 2 * math.pi, config.phi_bins + 1),
            np.zeros((config.z_bins, config.phi_bins), dtype=np.int64),
            0,
        )
    write_atomic(Path(config.out_dir) / "histogram.csv", histogram_csv(hist))
    occupied = int(np.count_nonzero(hist.counts))
    print(f"{hist.total_count} zero-energy outcomes in {occupied} occupied bins")
    return EXIT_NO_COLLAPSE if failed else EXIT_OK


COMMANDS = {"discriminate": cmd_discriminate, "martingale": cmd_martingale, "histogram": cmd_histogram}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--model", choices=MODELS, default="energy")
    common.add_argument("--custom-generators", metavar="PATH", help="JSON file for --model custom")
    common.add_argument("--sigma", type=float, default=1.0, help="coupling of the built-in models")
    common.add_argument("--n", type=int, default=10_000, help="number of trajectories")
    common.add_argument("--dt", type=float, default=1e-3)
    common.add_argument("--collapse-tol", type=float, default=1e-10)
    common.add_argument("--seed", type=int, default=0, help="master seed")
    common.add_argument("--snapshots", type=int, default=50)
    common.add_argument("--out-dir", default=".")
    common.add_argument("--workers", type=int, default=None, help="processes (default: $REDUCTION_LAB_WORKERS or 1)")

    parser = _Parser(prog="reduction-lab", description="Stochastic state reduction for two spins.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    disc = sub.add_parser("discriminate", parents=[common], help="run the ensemble and report")
    disc.add_argument("--max-steps", type=int, default=10_000_000)
    mart = sub.add_parser("martingale", parents=[common], help="martingale diagnostics")
    mart.add_argument("--max-steps", type=int, default=20_000, help="time horizon in steps")
    hist = sub.add_parser("histogram", parents=[common], help="sphere histogram of zero-energy outcomes")
    hist.add_argument("--max-steps", type=int, default=10_000_000)
    hist.add_argument("--z-bins", type=int, default=21, help="bins in cos(theta)")
    hist.add_argument("--phi-bins", type=int, default=21, help="bins in phi")
    return parser


def parse_config(argv) -> tuple[str, RunConfig]:
    args = build_parser().parse_args(argv)
    try:
        workers = args.workers if args.workers is not None else default_workers()
    except ValueError as err:
        raise ConfigError(str(err)) from None
    config = RunConfig(
        model=args.model,
        custom_generators=args.custom_generators,
        sigma=args.sigma,
        n=args.n,
        dt=args.dt,
        collapse_tol=args.collapse_tol,
        max_steps=args.max_steps,
        seed=args.seed,
        snapshots=args.snapshots,
        out_dir=args.out_dir,
        workers=workers,
        z_bins=getattr(args, "z_bins", 21),
        phi_bins=getattr(args, "phi_bins", 21),
    )
    return args.command, config


def main(argv=None) -> int:
    try:
        command, config = parse_config(argv)
        if config.model == "custom":
            build_model(config)
        return COMMANDS[command](config)
    except (ConfigError, ModelError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
