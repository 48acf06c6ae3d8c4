"""Command-line front end: train, verify, explosion, spectral, sweep.

Configs are flat ``key = value`` files with dotted sections::

    command = sweep
    network.width = 256
    sweep.depths = 16, 64
    sweep.tau_modes = inverse_L, inverse_sqrt_L

``--set key=value`` overrides the file. Every emitted file gets a
``<name>.meta.json`` sidecar with the resolved config and seed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import calibration as cal
from . import theory
from .core import SeedSpec
from .data import Dataset, gen_separated_dataset, load_idx, normalize_features
from .grad import loss
from .model import NetworkConfig, forward, init_network, traces_from_batch
from .trainer import TrainConfig, drift_check, train

OUT_ENV = "TAURESNET_OUT"
COMMANDS = ("train", "verify", "explosion", "spectral", "sweep")
TAU_MODES = ("inverse_L", "inverse_sqrt_L", "inverse_quarter_L", "custom")
CHECKS = ("spectral_product", "layer_norms", "explosion", "gradient_upper", "gradient_lower",
          "perturbation", "separateness", "semismooth")
SUMMARY_FIELDS = ("cell", "L", "m", "tau_mode", "tau", "steps", "initial_loss", "final_loss",
                  "converged", "diverged")

# stream labels for the pieces derived from the master seed
_DATA_STREAM, _NET_STREAM, _CHECK_STREAM = 1, 2, 3


class ConfigError(ValueError):
    pass


def resolve_tau(mode: str, L: int, value: float | None = None) -> float:
    if L < 1:
        raise ConfigError("depth must be >= 1")
    if mode.startswith("custom"):
        if ":" in mode:
            value = float(mode.split(":", 1)[1])
        if value is None:
            raise ConfigError("custom tau mode needs a value")
        if value < 0:
            raise ConfigError(f"custom tau must be >= 0, got {value}")
        return float(value)
    if mode == "inverse_L":
        return 1.0 / L
    if mode == "inverse_sqrt_L":
        return 1.0 / math.sqrt(L)
    if mode == "inverse_quarter_L":
        return L ** -0.25
    raise ConfigError(f"unknown tau mode {mode!r}; expected one of {TAU_MODES}")


def _tau_code(mode: str) -> int:
    return TAU_MODES.index(mode.split(":")[0])


# ---------------------------------------------------------------------------
# config

def _list(text, conv=str):
    return [conv(t.strip()) for t in str(text).split(",") if t.strip()]


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (default, converter)
SCHEMA = {
    "command": ("train", str),
    "seed": (0, int),
    "out": ("", str),
    "workers": (1, int),
    "network.depth": (16, int),
    "network.width": (256, int),
    "network.input_dim": (16, int),
    "network.output_dim": (4, int),
    "network.arch": ("resnet", str),
    "network.tau_mode": ("inverse_L", str),
    "network.tau": (None, float),
    "data.source": ("synthetic", str),
    "data.n": (8, int),
    "data.delta": (0.5, float),
    "data.target_scale": (1.0, float),
    "data.images": ("", str),
    "data.labels": ("", str),
    "data.subset_n": (64, int),
    "train.lr": (cal.DEFAULT_LR, float),
    "train.steps": (5000, int),
    "train.batch_size": (0, int),
    "train.target_eps": (0.0, float),
    "train.target_rel": (1e-3, float),
    "train.drift_tracking": (True, _bool),
    "verify.checks": (["spectral_product"], _list),
    "verify.omega": (0.01, float),
    "verify.spectral_c": (1.0, float),
    "verify.layer_c": (0.2, float),
    "verify.trials": (100, int),
    "explosion.trials": (500, int),
    "explosion.depths": ([], lambda t: _list(t, int)),
    "spectral.trials": (200, int),
    "spectral.a": (1, int),
    "spectral.b": (0, int),
    "spectral.c": (1.0, float),
    "sweep.depths": ([16, 64], lambda t: _list(t, int)),
    "sweep.widths": ([], lambda t: _list(t, int)),
    "sweep.tau_modes": (["inverse_L", "inverse_sqrt_L"], _list),
}


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def from_mapping(cls, raw: dict) -> "ExperimentConfig":
        vals = {k: d for k, (d, _) in SCHEMA.items()}
        errors = []
        for k, v in raw.items():
            if k not in SCHEMA:
                errors.append(f"{k}: unknown key")
                continue
            conv = SCHEMA[k][1]
            try:
                vals[k] = v if not isinstance(v, str) else conv(v)
            except (TypeError, ValueError) as exc:
                errors.append(f"{k}: {exc}")
        cfg = cls(vals)
        errors += cfg._validate()
        if errors:
            raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
        return cfg

    def _validate(self) -> list[str]:
        v, errs = self.values, []
        if v["command"] not in COMMANDS:
            errs.append(f"command: must be one of {COMMANDS}")
        if v["network.arch"] not in ("resnet", "feedforward"):
            errs.append("network.arch: must be resnet or feedforward")
        modes = [v["network.tau_mode"]] + (v["sweep.tau_modes"] if v["command"] == "sweep" else [])
        for mode in modes:
            if mode.split(":")[0] not in TAU_MODES:
                errs.append(f"tau_mode: unknown mode {mode!r}")
            elif mode == "custom" and v["network.tau"] is None:
                errs.append("network.tau: required with tau_mode = custom")
        if v["network.tau"] is not None and v["network.tau"] < 0:
            errs.append("network.tau: must be >= 0")
        for k in ("network.depth",):
            if v[k] < 2:
                errs.append(f"{k}: must be >= 2")
        for k in ("network.width", "network.input_dim", "network.output_dim", "data.n", "train.steps",
                  "workers"):
            if v[k] < 1:
                errs.append(f"{k}: must be >= 1")
        if v["data.source"] not in ("synthetic", "idx"):
            errs.append("data.source: must be synthetic or idx")
        if v["data.source"] == "idx":
            for k in ("data.images", "data.labels"):
                if not v[k] or not Path(v[k]).is_file():
                    errs.append(f"{k}: file not found: {v[k]!r}")
        bad = [c for c in v["verify.checks"] if c not in CHECKS]
        if bad:
            errs.append(f"verify.checks: unknown checks {bad}")
        if v["train.lr"] <= 0:
            errs.append("train.lr: must be positive")
        return errs

    def tau_for(self, L: int, mode: str | None = None) -> float:
        return resolve_tau(mode or self["network.tau_mode"], L, self["network.tau"])

    def network(self, L=None, m=None, mode=None, p=None) -> NetworkConfig:
        L = L or self["network.depth"]
        return NetworkConfig(L, m or self["network.width"], p or self["network.input_dim"],
                             self["network.output_dim"], self.tau_for(L, mode), self["network.arch"])

    def resolved(self) -> dict:
        out = dict(self.values)
        out["network.tau_resolved"] = self.tau_for(self["network.depth"])
        return out


# ---------------------------------------------------------------------------
# outputs

def _write(out: Path, name: str, text: str, cfg: ExperimentConfig, extra: dict | None = None) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text)
    meta = {"file": name, "config": cfg.resolved(), "seed": cfg["seed"]}
    if extra:
        meta.update(extra)
    (out / f"{name}.meta.json").write_text(json.dumps(theory._jsonable(meta), indent=2, sort_keys=True) + "\n")
    return path


def _csv(rows, fields) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg["data.source"] == "idx":
        raw = load_idx(cfg["data.images"], cfg["data.labels"])
        k = min(cfg["data.subset_n"], raw.labels.shape[0])
        sub = type(raw)(raw.images[:k], raw.labels[:k])
        return normalize_features(sub, d=cfg["network.output_dim"])
    return gen_separated_dataset(cfg["data.n"], cfg["network.input_dim"], cfg["network.output_dim"],
                                 cfg["data.delta"], cfg["data.target_scale"],
                                 SeedSpec(cfg["seed"], (_DATA_STREAM,)))


# ---------------------------------------------------------------------------
# commands

def _train_cell(cfg: ExperimentConfig, ds: Dataset, L: int, m: int, mode: str):
    net = cfg.network(L, m, mode, p=ds.p)
    seed = SeedSpec(cfg["seed"], (_NET_STREAM, L, m, _tau_code(mode)))
    params = init_network(net, seed)
    F0 = loss(params, ds).total
    eps = max(cfg["train.target_eps"], cfg["train.target_rel"] * F0)
    bs = cfg["train.batch_size"] or None
    tc = TrainConfig(cfg["train.lr"], cfg["train.steps"], bs, eps, cfg["train.drift_tracking"],
                     seed.child(0))
    log = train(params, ds, tc)
    return net, seed, log


def _cell_task(args):
    cfg, ds, index, L, m, mode = args
    net, seed, log = _train_cell(cfg, ds, L, m, mode)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=("step", "loss", "drift_top", "drift_residual_max", "diverged"),
                       lineterminator="\n")
    w.writeheader()
    w.writerows(log.rows())
    summary = {
        "cell": index, "L": L, "m": m, "tau_mode": mode, "tau": repr(net.tau),
        "steps": log.steps_taken, "initial_loss": repr(float(log.initial_loss)),
        "final_loss": repr(float(log.final_loss)),
        "converged": str(log.converged_step is not None).lower(),
        "diverged": str(log.diverged).lower(),
    }
    return summary, buf.getvalue(), str(seed)


def cmd_train(cfg, out: Path) -> int:
    ds = load_dataset(cfg)
    summary, text, seed = _cell_task((cfg, ds, 0, cfg["network.depth"], cfg["network.width"],
                                      cfg["network.tau_mode"]))
    _write(out, "train.csv", text, cfg, {"cell_seed": seed})
    _write(out, "summary.csv", _csv([summary], SUMMARY_FIELDS), cfg)
    return 0


def cmd_sweep(cfg, out: Path, workers: int) -> int:
    ds = load_dataset(cfg)
    widths = cfg["sweep.widths"] or [cfg["network.width"]]
    cells = [(cfg, ds, i, L, m, mode) for i, (L, m, mode) in enumerate(
        (L, m, mode) for L in cfg["sweep.depths"] for m in widths for mode in cfg["sweep.tau_modes"])]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_cell_task, cells))
    else:
        results = [_cell_task(c) for c in cells]
    rows = []
    for (_, _, i, L, m, mode), (summary, text, seed) in zip(cells, results):
        _write(out, f"cell{i:03d}_L{L}_m{m}_{mode.replace(':', '-')}.csv", text, cfg,
               {"cell": i, "L": L, "m": m, "tau_mode": mode, "cell_seed": seed})
        rows.append(summary)
    _write(out, "summary.csv", _csv(rows, SUMMARY_FIELDS), cfg)
    return 0


def _reports_out(out, stem, reports, cfg) -> int:
    _write(out, f"{stem}.json", theory.reports_to_json(reports), cfg)
    _write(out, f"{stem}.csv", theory.reports_to_csv(reports), cfg)
    failed = [r for r in reports if r.applicable and not r.passed]
    for r in reports:
        state = "n/a" if not r.applicable else ("PASS" if r.passed else "FAIL")
        print(f"{state:4s} {r.check_name}: measured={theory._fmt(r.measured)} bound={theory._fmt(r.bound_value)}")
    return 1 if failed else 0


def cmd_explosion(cfg, out: Path) -> int:
    depths = cfg["explosion.depths"] or [cfg["network.depth"]]
    reports = []
    for L in depths:
        net = cfg.network(L)
        reports.append(theory.estimate_explosion(net, cfg["explosion.trials"],
                                                 SeedSpec(cfg["seed"], (_CHECK_STREAM, L))))
    return _reports_out(out, "explosion", reports, cfg)


def cmd_spectral(cfg, out: Path) -> int:
    net = cfg.network()
    b = cfg["spectral.b"] or net.L - 1
    x = theory.unit_probe(net.p)
    reports = []
    for t in range(cfg["spectral.trials"]):
        params = init_network(net, SeedSpec(cfg["seed"], (_NET_STREAM, t)))
        reports.append(theory.check_spectral_product(params, theory.masks_for(params, x),
                                                     cfg["spectral.a"], b, cfg["spectral.c"]))
    return _reports_out(out, "spectral", reports, cfg)


def run_checks(cfg: ExperimentConfig) -> list[theory.BoundReport]:
    ds = load_dataset(cfg)
    net = cfg.network(p=ds.p)
    params = init_network(net, SeedSpec(cfg["seed"], (_NET_STREAM,)))
    k = cal.DEGRADATION_FACTOR
    reports = []
    for name in cfg["verify.checks"]:
        if name == "spectral_product":
            if net.L < 3:
                raise ConfigError("spectral_product needs depth >= 3")
            reports.append(theory.check_spectral_product(params, theory.masks_for(params, ds.features[0]),
                                                         1, net.L - 1, cfg["verify.spectral_c"]))
        elif name == "layer_norms":
            reports += [theory.check_layer_norms(forward(params, x), cfg["verify.layer_c"]) for x in ds.features]
        elif name == "explosion":
            reports.append(theory.estimate_explosion(net, cfg["verify.trials"],
                                                     SeedSpec(cfg["seed"], (_CHECK_STREAM,))))
        elif name == "gradient_upper":
            reports.append(theory.gradient_bound_ratios(params, ds, k * cal.frozen("gradient_upper")))
        elif name == "gradient_lower":
            reports.append(theory.gradient_lower_ratio(params, ds, cal.frozen("gradient_lower") / k))
        elif name in ("perturbation", "semismooth"):
            pert = theory.make_perturbation(net, cfg["verify.omega"], SeedSpec(cfg["seed"], (_CHECK_STREAM, 1)))
            if name == "perturbation":
                consts = [k * cal.frozen(n) for n in ("perturb_h", "perturb_flips", "perturb_h_top",
                                                       "perturb_flips_top")]
                reports.append(theory.perturbation_report(params, pert, ds.features[0], consts))
            else:
                reports.append(theory.semismooth_residual(params, pert, ds, cal.SEMISMOOTH_C1, cal.SEMISMOOTH_C2))
        elif name == "separateness":
            reports.append(theory.separateness_check(traces_from_batch(params, ds.features), ds.delta,
                                                     cal.frozen("separateness") / k))
    return reports


def cmd_verify(cfg, out: Path) -> int:
    return _reports_out(out, "reports", run_checks(cfg), cfg)


def run(cfg: ExperimentConfig, out: Path | None = None, workers: int | None = None) -> int:
    out = Path(out or cfg["out"] or os.environ.get(OUT_ENV, "runs"))
    workers = workers or cfg["workers"]
    cmd = cfg["command"]
    if cmd == "train":
        return cmd_train(cfg, out)
    if cmd == "sweep":
        return cmd_sweep(cfg, out, workers)
    if cmd == "explosion":
        return cmd_explosion(cfg, out)
    if cmd == "spectral":
        return cmd_spectral(cfg, out)
    return cmd_verify(cfg, out)


def build_config(config_path=None, sets=(), seed=None, command=None) -> ExperimentConfig:
    raw = parse_kv(Path(config_path).read_text()) if config_path else {}
    for item in sets:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        raw[k.strip()] = v.strip()
    if command:
        raw["command"] = command
    if seed is not None:
        raw["seed"] = str(seed)
    return ExperimentConfig.from_mapping(raw)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="tauresnet", description=__doc__.split("\n")[0])
    ap.add_argument("command", nargs="?", choices=COMMANDS, help="overrides the config's command")
    ap.add_argument("--config", metavar="PATH")
    ap.add_argument("--set", metavar="KEY=VALUE", action="append", default=[], dest="sets")
    ap.add_argument("--workers", type=int, metavar="N")
    ap.add_argument("--out", metavar="DIR")
    ap.add_argument("--seed", type=int, metavar="U64")
    args = ap.parse_args(argv)
    try:
        cfg = build_config(args.config, args.sets, args.seed, args.command)
        return run(cfg, args.out, args.workers)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    except Exception as exc:  # data errors and failed runs
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
