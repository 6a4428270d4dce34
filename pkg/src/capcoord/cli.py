"""Command-line pipeline: data generation, path sampling, training, backtest.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric fault.
Errors print a single ``error: ...`` line to stderr. All randomness derives
from one master seed, fanned out to per-module seeds with SeedSequence spawn
keys (documented in MODULE_SEED_INDEX). Relative output paths are placed
under $CAPCOORD_OUT_DIR when that variable is set.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields

import numpy as np

from .backtest import EvalReport, metrics, write_report_csv
from .capacity_sampler import (SamplerConfig, read_paths_csv,
                               sample_capacity_path, write_paths_csv)
from .coordinators import (DualSearchConfig, MPCCoordinator, NeuralCoordinator,
                           NeuralCoordinatorConfig)
from .idp_core import (CapacityPath, ContractViolation, HorizonError,
                       Population, ZeroPriceCoordinator, initial_state, rollout)
from .policies import (BaseStockPolicy, NeuralPolicy, NeuralPolicyConfig)
from .synth_data import PopulationConfig, generate, read_data_csv, write_data_csv
from .tape import NumericFault, ParamVector
from .training import (TrainConfig, train_coordinator, train_policy,
                       write_history_csv)

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

# Fixed spawn-key indices so runs are reproducible across subcommands.
MODULE_SEED_INDEX = {"synth_data": 0, "capacity_sampler": 1, "training": 2,
                     "coordinator": 3, "backtest": 4}


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


def module_seed(master: int, module: str) -> int:
    idx = MODULE_SEED_INDEX[module]
    return int(np.random.SeedSequence(master, spawn_key=(idx,))
               .generate_state(1)[0])


def _out_path(path: str) -> str:
    base = os.environ.get("CAPCOORD_OUT_DIR")
    if base and not os.path.isabs(path):
        return os.path.join(base, path)
    return path


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as e:
        raise DataError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config parse failure in {path}: {e}") from e


def _build_config(cls, raw: dict, context: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown {context} keys: {sorted(unknown)}")
    try:
        return cls(**{k: (tuple(v) if isinstance(v, list) else v)
                      for k, v in raw.items()})
    except (ContractViolation, TypeError, ValueError) as e:
        raise ConfigError(f"invalid {context}: {e}") from e


def _require_file(path: str) -> str:
    if not os.path.exists(path):
        raise DataError(f"missing input file: {path}")
    return path


def _mlp_shape_from_layout(layout) -> tuple[tuple[int, ...], int, int]:
    """(hidden widths, input dim, output dim) from a checkpoint layout."""
    weights = [(name, shape) for name, shape in layout if name.startswith("W")]
    if not weights:
        raise DataError("checkpoint has no weight matrices")
    in_dim = weights[0][1][0]
    out_dim = weights[-1][1][1]
    hidden = tuple(shape[1] for _, shape in weights[:-1])
    return hidden, in_dim, out_dim


def load_policy(path: str) -> NeuralPolicy:
    pv = ParamVector.load(_require_file(path))
    hidden, _, out_dim = _mlp_shape_from_layout(pv.layout)
    if out_dim != 1:
        raise DataError("policy checkpoint output dimension must be 1")
    return NeuralPolicy(NeuralPolicyConfig(hidden=hidden), params=pv)


def load_coordinator(path: str) -> NeuralCoordinator:
    pv = ParamVector.load(_require_file(path))
    hidden, _, out_dim = _mlp_shape_from_layout(pv.layout)
    if out_dim % 2 or out_dim < 4:
        raise DataError("coordinator checkpoint output dimension must be even "
                        "and at least 4")
    cfg = NeuralCoordinatorConfig(hidden=hidden, forecast_steps=out_dim // 2 - 1)
    return NeuralCoordinator(cfg, params=pv)


def cmd_generate_data(args) -> int:
    raw = _load_json(args.config)
    cfg = _build_config(PopulationConfig, raw, "population config")
    if args.seed is not None:
        cfg.seed = module_seed(args.seed, "synth_data")
    products = generate(cfg)
    write_data_csv(_out_path(args.out), products)
    return 0


def cmd_sample_paths(args) -> int:
    anchor = args.demand_anchor
    cfg = SamplerConfig(order=args.order, scale=args.scale,
                        horizon=args.horizon, base_level=args.base_level,
                        demand_anchor=anchor)
    seed = module_seed(args.seed, "capacity_sampler")
    rng = np.random.default_rng(seed)
    paths = [sample_capacity_path(cfg, cfg, int(rng.integers(2 ** 31)))
             for _ in range(args.count)]
    write_paths_csv(_out_path(args.out), paths)
    return 0


def _load_population(path: str) -> Population:
    products = read_data_csv(_require_file(path))
    if not products:
        raise DataError(f"no products in {path}")
    return Population.from_products(products)


def cmd_train(args) -> int:
    raw = _load_json(args.config)
    allowed = {"data", "paths", "out", "history", "seed", "train"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown run config keys: {sorted(unknown)}")
    for key in ("data", "paths", "out"):
        if key not in raw:
            raise ConfigError(f"run config missing required key: {key}")
    cfg = _build_config(TrainConfig, raw.get("train", {}), "train config")
    cfg.seed = module_seed(int(raw.get("seed", 0)), "training")
    pop = _load_population(raw["data"])
    paths = read_paths_csv(_require_file(raw["paths"]))
    result = train_policy(pop, paths, cfg)
    result.params.save(_out_path(raw["out"]))
    if raw.get("history"):
        write_history_csv(result.history, _out_path(raw["history"]))
    return 0


def cmd_train_coordinator(args) -> int:
    raw = _load_json(args.config)
    allowed = {"data", "paths", "policy", "out", "history", "seed", "train"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown run config keys: {sorted(unknown)}")
    for key in ("data", "paths", "policy", "out"):
        if key not in raw:
            raise ConfigError(f"run config missing required key: {key}")
    cfg = _build_config(TrainConfig, raw.get("train", {}), "train config")
    cfg.seed = module_seed(int(raw.get("seed", 0)), "coordinator")
    pop = _load_population(raw["data"])
    paths = read_paths_csv(_require_file(raw["paths"]))
    policy = load_policy(raw["policy"])

    def sampler(seed: int) -> CapacityPath:
        return paths[seed % len(paths)]

    result = train_coordinator(pop, sampler, policy, cfg)
    result.params.save(_out_path(raw["out"]))
    if raw.get("history"):
        write_history_csv(result.history, _out_path(raw["history"]))
    return 0


def _make_policy(spec: str):
    if spec == "basestock":
        return BaseStockPolicy()
    return load_policy(spec)


def _make_coordinator(spec: str, forecast_steps: int, seed: int):
    if spec == "none":
        return ZeroPriceCoordinator(forecast_steps)
    if spec == "mpc":
        return MPCCoordinator(DualSearchConfig(horizon=forecast_steps + 1),
                              seed=seed)
    return load_coordinator(spec)


def cmd_backtest(args) -> int:
    pop = _load_population(args.data)
    paths = read_paths_csv(_require_file(args.paths))
    policy = _make_policy(args.policy)
    seed = module_seed(args.seed, "backtest")
    rng = np.random.default_rng(seed)
    k, inflight = initial_state(pop, args.init, rng)

    rows = []
    for g, path in enumerate(paths):
        if path.horizon != pop.horizon:
            raise DataError(f"path {g} horizon {path.horizon} does not match "
                            f"data horizon {pop.horizon}")
        coordinator = _make_coordinator(args.coordinator, args.forecast_steps,
                                        seed + g)
        zero = ZeroPriceCoordinator(args.forecast_steps)
        common = dict(discount=args.discount, seed=seed,
                      initial_pipeline=inflight,
                      forecast_steps=args.forecast_steps)
        led = rollout(pop, k, policy, coordinator, path, **common).ledger
        ref_rl = rollout(pop, k, policy, zero, path, **common).ledger
        ref_bs = rollout(pop, k, BaseStockPolicy(), zero, path, **common).ledger
        report: EvalReport = metrics(led, path, ref_rl, ref_bs,
                                     constraint=args.constraint)
        row = {"initialization": args.init, "policy": args.policy,
               "coordinator": args.coordinator, "path_id": g}
        row.update(report.as_row())
        rows.append(row)
    write_report_csv(rows, _out_path(args.out))
    return 0


def cmd_report(args) -> int:
    import csv as _csv

    with open(_require_file(args.infile)) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(_csv.DictReader(lines))
    if not rows:
        raise DataError(f"no evaluation rows in {args.infile}")
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        key = (row["initialization"], row["policy"], row["coordinator"])
        groups.setdefault(key, []).append(row)

    def mean_of(group, col):
        vals = [float(r[col]) for r in group if r[col] not in ("", "None")]
        return f"{np.mean(vals):.4f}" if vals else ""

    with open(_out_path(args.out), "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["initialization", "policy", "coordinator",
                         "M1", "M2", "M3", "M4", "reward"])
        for key in sorted(groups):
            group = groups[key]
            writer.writerow([*key, mean_of(group, "M1"), mean_of(group, "M2"),
                             mean_of(group, "M3"), mean_of(group, "M4"),
                             mean_of(group, "rescaled_reward")])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="capcoord")
    parser.add_argument("--threads", type=int, default=1,
                        help="cap on internal parallelism")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="synthesize a product population")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_generate_data)

    p = sub.add_parser("sample-paths", help="sample capacity-limit curves")
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--horizon", type=int, default=52)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--base-level", type=float, default=1.0)
    p.add_argument("--demand-anchor", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sample_paths)

    p = sub.add_parser("train", help="primal-dual policy training")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("train-coordinator", help="coordinator training")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_train_coordinator)

    p = sub.add_parser("backtest", help="evaluate a (policy, coordinator) pair")
    p.add_argument("--policy", required=True,
                   help="checkpoint path or 'basestock'")
    p.add_argument("--coordinator", required=True,
                   help="checkpoint path, 'mpc', or 'none'")
    p.add_argument("--paths", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init", choices=["zero", "onhand_inflight"],
                   default="zero")
    p.add_argument("--discount", type=float, default=0.999)
    p.add_argument("--forecast-steps", type=int, default=4)
    p.add_argument("--constraint", choices=["storage", "inbound"],
                   default="storage")
    p.set_defaults(fn=cmd_backtest)

    p = sub.add_parser("report", help="aggregate a backtest CSV")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code not in (0, None) else 0
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError, ContractViolation, HorizonError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericFault as e:
        print(f"error: numeric fault: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
