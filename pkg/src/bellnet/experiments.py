"""Config-driven experiments: depth sweep, filter-order sweep and transfer.

Every realization draws one evaluation estimate ``q_bar`` shared by all methods
(common random numbers), and every BellNet point trains a fresh model whose
seed is derived from ``(seed, realization, variant, depth, order)``.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .environments import ACTION_NAMES, GridSpec, build_cliff_mdp, mirror_pair_permutation, mirror_spec
from .mdp import NumericError, TabularMdp, unvec
from .model import DEFAULT_TEMPERATURE, BellNetModel, forward
from .solvers import CONVERGED_TOL, optimal_q, policy_iteration, value_iteration
from .training import TrainConfig, TrainingDiverged, init_model, sample_q_bar, train

log = logging.getLogger(__name__)

SWEEPS = ("depth", "order", "transfer")
STATISTICS = ("median", "p25", "p75")
_VARIANT_CODE = {"BN": 0, "BN-WS": 1}


def modified_cliff_spec() -> GridSpec:
    """Default transfer target: cliffs, start and goal all moved, no symmetry with the source."""
    return GridSpec(
        cliff_cells=frozenset({(1, c) for c in range(1, 10)} | {(3, c) for c in range(4, 9)}),
        start=(0, 0),
        goal=(2, 11),
    )


def nerr(q_hat, q_star) -> float:
    """Squared distance between the unit-normalised vectors."""
    q_hat = np.asarray(q_hat, dtype=np.float64)
    q_star = np.asarray(q_star, dtype=np.float64)
    if q_hat.shape != q_star.shape:
        raise ValueError("nerr needs vectors of equal length")
    a, b = np.linalg.norm(q_hat), np.linalg.norm(q_star)
    if a == 0 or b == 0:
        raise ValueError("nerr is undefined for a zero vector")
    d = q_hat / a - q_star / b
    return float(d @ d)


# ---------------------------------------------------------------- configuration


_SWEEP_DEFAULTS = {
    # x-axis values, the other axis, which BellNet variants, baselines
    "depth": dict(values=list(range(2, 11)), fixed=[5, 10], variants=["BN", "BN-WS"],
                  val_it=True, pol_it_eval_steps=[10]),
    "order": dict(values=[1, 5, 10, 15], fixed=[5, 10, 15], variants=["BN-WS"],
                  val_it=False, pol_it_eval_steps=[]),
    "transfer": dict(values=list(range(2, 9)), fixed=[3, 5, 10], variants=["BN-WS"],
                     val_it=True, pol_it_eval_steps=[5, 10]),
}


@dataclass
class ExperimentConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    gamma: float = 0.99
    depth: int = 4
    filter_order: int = 10
    temperature: float = DEFAULT_TEMPERATURE
    weight_shared: bool = True
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep_variable: str = "depth"
    sweep_values: list = field(default_factory=lambda: list(range(2, 11)))
    sweep_fixed: list = field(default_factory=lambda: [5, 10])
    variants: list = field(default_factory=lambda: ["BN", "BN-WS"])
    val_it: bool = True
    pol_it_eval_steps: list = field(default_factory=lambda: [10])
    realizations: int = 15
    transfer_target: GridSpec | None = None
    transfer_q_bar: str = "independent"
    output_dir: str = "results"
    seed: int = 0

    def __post_init__(self):
        if self.sweep_variable not in SWEEPS:
            raise ValueError(f"sweep variable must be one of {SWEEPS}")
        for name in ("sweep_values", "sweep_fixed", "pol_it_eval_steps"):
            vals = getattr(self, name)
            if any(int(v) != v or v < 0 for v in vals):
                raise ValueError(f"{name} must hold non-negative integers")
        positive = [*self.sweep_values, *self.pol_it_eval_steps]
        if self.sweep_variable == "order":
            positive += self.sweep_fixed
        if any(v < 1 for v in positive):
            raise ValueError("sweep values, depths and evaluation-step counts must be positive")
        if self.realizations < 1:
            raise ValueError("realizations must be >= 1")
        if set(self.variants) - set(_VARIANT_CODE):
            raise ValueError(f"variants must be drawn from {sorted(_VARIANT_CODE)}")
        if self.transfer_q_bar not in ("independent", "mirrored"):
            raise ValueError("transfer q_bar must be 'independent' or 'mirrored'")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")

    @classmethod
    def for_sweep(cls, variable: str, **overrides) -> "ExperimentConfig":
        d = dict(_SWEEP_DEFAULTS[variable])
        kw = dict(
            sweep_variable=variable,
            sweep_values=d["values"],
            sweep_fixed=d["fixed"],
            variants=d["variants"],
            val_it=d["val_it"],
            pol_it_eval_steps=d["pol_it_eval_steps"],
        )
        if variable == "transfer":
            kw["transfer_target"] = modified_cliff_spec()
        kw.update(overrides)
        return cls(**kw)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = copy.deepcopy(d)
        unknown = set(d) - {"environment", "model", "train", "sweep", "baselines", "realizations",
                            "transfer", "output_dir", "seed"}
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        sweep = d.get("sweep", {})
        variable = sweep.get("variable", "depth")
        if variable not in SWEEPS:
            raise ValueError(f"sweep variable must be one of {SWEEPS}")
        defaults = _SWEEP_DEFAULTS[variable]
        env = d.get("environment", {})
        model = d.get("model", {})
        base = d.get("baselines", {})
        kw = dict(
            grid=GridSpec.from_dict(env.get("grid", {})),
            gamma=float(env.get("gamma", 0.99)),
            depth=int(model.get("depth", 4)),
            filter_order=int(model.get("filter_order", 10)),
            temperature=float(model.get("temperature", DEFAULT_TEMPERATURE)),
            weight_shared=bool(model.get("weight_shared", True)),
            train=TrainConfig.from_dict(d.get("train", {})),
            sweep_variable=variable,
            sweep_values=list(sweep.get("values", defaults["values"])),
            sweep_fixed=list(sweep.get("fixed", defaults["fixed"])),
            variants=list(sweep.get("variants", defaults["variants"])),
            val_it=bool(base.get("val_it", defaults["val_it"])),
            pol_it_eval_steps=list(base.get("pol_it_eval_steps", defaults["pol_it_eval_steps"])),
            realizations=int(d.get("realizations", 15)),
            output_dir=str(d.get("output_dir", "results")),
            seed=int(d.get("seed", 0)),
        )
        transfer = d.get("transfer")
        if transfer is not None:
            target = transfer.get("target", "modified")
            if target == "mirror":
                kw["transfer_target"] = mirror_spec(kw["grid"])
            elif target == "modified":
                kw["transfer_target"] = modified_cliff_spec()
            else:
                kw["transfer_target"] = GridSpec.from_dict(target)
            kw["transfer_q_bar"] = transfer.get("q_bar", "independent")
        elif variable == "transfer":
            kw["transfer_target"] = modified_cliff_spec()
        return cls(**kw)

    def to_dict(self) -> dict:
        d = {
            "environment": {"grid": self.grid.to_dict(), "gamma": self.gamma},
            "model": {"depth": self.depth, "filter_order": self.filter_order,
                      "temperature": self.temperature, "weight_shared": self.weight_shared},
            "train": self.train.to_dict(),
            "sweep": {"variable": self.sweep_variable, "values": list(self.sweep_values),
                      "fixed": list(self.sweep_fixed), "variants": list(self.variants)},
            "baselines": {"val_it": self.val_it, "pol_it_eval_steps": list(self.pol_it_eval_steps)},
            "realizations": self.realizations,
            "output_dir": self.output_dir,
            "seed": self.seed,
        }
        if self.transfer_target is not None:
            d["transfer"] = {"target": self.transfer_target.to_dict(), "q_bar": self.transfer_q_bar}
        return d


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------- results


@dataclass
class ResultRow:
    method: str
    x: int
    realization: int
    seed: int
    nerr: float
    wall_time_ms: float = 0.0
    failed: bool = False


def derive_seed(*parts) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def eval_q_bar(config: ExperimentConfig, mdp: TabularMdp, realization: int) -> np.ndarray:
    rng = np.random.default_rng([config.seed, realization, 2])
    return sample_q_bar(mdp, config.train.q_bar, rng, config.train.discount(mdp))


def train_point(config: ExperimentConfig, mdp: TabularMdp, variant: str, depth: int, order: int, realization: int):
    """Train the BellNet for one sweep point; returns ``(model, history)``."""
    shared = variant == "BN-WS"
    seed = derive_seed(config.seed, realization, _VARIANT_CODE[variant], depth, order)
    tcfg = _with_seed(config.train, seed)
    model = init_model(depth, order, tcfg.discount(mdp), tcfg, config.temperature, shared)
    return train(model, mdp, tcfg)


def _with_seed(tcfg: TrainConfig, seed: int) -> TrainConfig:
    d = tcfg.to_dict()
    d["seed"] = seed
    return TrainConfig.from_dict(d)


def checked_optimum(mdp: TabularMdp) -> np.ndarray:
    report = optimal_q(mdp)
    if not report.residual < CONVERGED_TOL:
        raise NumericError(f"optimal Q did not converge (residual {report.residual:.3e})")
    return report.q


def _sweep_points(config: ExperimentConfig):
    """Yield ``(method, x, kind, depth, order, eval_steps)`` for one realization."""
    v = config.sweep_variable
    for x in config.sweep_values:
        if v in ("depth", "transfer"):
            if config.val_it:
                yield "Val-it", x, "val", x, None, None
            for e in config.pol_it_eval_steps:
                yield f"Pol-it-{e}", x, "pol", x, None, e
            for variant in config.variants:
                for K in config.sweep_fixed:
                    yield f"{variant}-{K}", x, variant, x, K, None
        else:
            # x is the filter order; Pol-it runs x evaluation steps per improvement
            if config.val_it:
                for d in config.sweep_fixed:
                    yield f"Val-it-{d}", x, "val", d, None, None
            for d in config.sweep_fixed:
                yield f"Pol-it-{d}", x, "pol", d, None, x
            for variant in config.variants:
                for d in config.sweep_fixed:
                    yield f"{variant}-{d}", x, variant, d, x, None


def _environments(config: ExperimentConfig):
    source = build_cliff_mdp(config.grid, config.gamma)
    if config.sweep_variable != "transfer":
        return source, source
    if config.transfer_target is None:
        raise ValueError("transfer sweep needs a transfer target")
    target = build_cliff_mdp(config.transfer_target, config.gamma)
    if (target.num_states, target.num_actions) != (source.num_states, source.num_actions):
        raise ValueError("transfer target must have the same number of states and actions as the source")
    return source, target


def _target_q_bar(config, source, target, realization):
    q_bar = eval_q_bar(config, source, realization)
    if config.sweep_variable == "transfer" and config.transfer_q_bar == "mirrored":
        if config.transfer_target != mirror_spec(config.grid):
            raise ValueError("mirrored q_bar requires the transfer target to be the mirrored source")
        out = np.empty_like(q_bar)
        out[mirror_pair_permutation(config.grid)] = q_bar
        return out
    if target is not source:
        return eval_q_bar(config, target, realization)
    return q_bar


def run_realization(config: ExperimentConfig, realization: int, q_star=None, keep_q=False):
    """All sweep points for one realization. Returns ``(rows, q_hats)``."""
    source, target = _environments(config)
    if q_star is None:
        q_star = checked_optimum(target)
    q_bar = _target_q_bar(config, source, target, realization)
    rows, q_hats = [], {}
    for method, x, kind, depth, order, eval_steps in _sweep_points(config):
        t0 = time.perf_counter()
        failed = False
        if kind == "val":
            q = value_iteration(target, depth, q_bar).q
        elif kind == "pol":
            q = policy_iteration(target, eval_steps, depth, q_bar).q
        else:
            try:
                model, _ = train_point(config, source, kind, depth, order, realization)
                q, _, _ = forward(model, target, q_bar)
            except (TrainingDiverged, NumericError) as exc:
                log.warning("%s at x=%s realization %d failed: %s", method, x, realization, exc)
                failed, q = True, None
        err = float("nan") if failed else nerr(q, q_star)
        ms = 1e3 * (time.perf_counter() - t0)
        rows.append(ResultRow(method, x, realization, derive_seed(config.seed, realization), err, ms, failed))
        if keep_q and not failed:
            q_hats[(method, x)] = q
    return rows, q_hats


def run_sweep(config: ExperimentConfig, jobs: int = 1, keep_q=False):
    """Run every realization; returns ``(rows, q_hats_of_realization_0)``."""
    _, target = _environments(config)
    q_star = checked_optimum(target)
    realizations = range(config.realizations)
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            futures = [ex.submit(run_realization, config, i, q_star, keep_q and i == 0) for i in realizations]
            results = [f.result() for f in futures]
    else:
        results = [run_realization(config, i, q_star, keep_q and i == 0) for i in realizations]
    rows = [row for res, _ in results for row in res]
    return rows, results[0][1]


def run_depth_sweep(config: ExperimentConfig, jobs: int = 1):
    if config.sweep_variable != "depth":
        raise ValueError("config is not a depth sweep")
    return run_sweep(config, jobs)[0]


def run_order_sweep(config: ExperimentConfig, jobs: int = 1):
    if config.sweep_variable != "order":
        raise ValueError("config is not a filter-order sweep")
    return run_sweep(config, jobs)[0]


def run_transfer(config: ExperimentConfig, jobs: int = 1):
    if config.sweep_variable != "transfer":
        raise ValueError("config is not a transfer experiment")
    return run_sweep(config, jobs)[0]


# ---------------------------------------------------------------- summaries and CSV


def summarize(rows):
    """``{(method, x): {"median", "p25", "p75", "failed"}}`` over successful realizations."""
    groups = {}
    for row in rows:
        groups.setdefault((row.method, row.x), []).append(row)
    out = {}
    for key, group in groups.items():
        vals = np.array([r.nerr for r in group if not r.failed])
        stats = {"failed": sum(r.failed for r in group)}
        for name, pct in zip(STATISTICS, (50, 25, 75)):
            stats[name] = float(np.percentile(vals, pct, method="linear")) if vals.size else float("nan")
        out[key] = stats
    return out


def _methods_in_order(rows):
    seen = {}
    for r in rows:
        seen.setdefault(r.method, None)
    return list(seen)


def write_results(rows, out_dir, name: str) -> dict:
    """Write raw, long-format and per-statistic wide CSVs; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = summarize(rows)
    methods = _methods_in_order(rows)
    xs = sorted({r.x for r in rows})
    paths = {}

    paths["raw"] = out / f"{name}_raw.csv"
    with open(paths["raw"], "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["method", "x", "realization", "seed", "nerr", "failed"])
        for r in rows:
            w.writerow([r.method, r.x, r.realization, r.seed, repr(r.nerr), int(r.failed)])

    # wall time is not reproducible, so it lives apart from the nerr data
    paths["timing"] = out / f"{name}_timing.csv"
    with open(paths["timing"], "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["method", "x", "realization", "wall_time_ms"])
        for r in rows:
            w.writerow([r.method, r.x, r.realization, f"{r.wall_time_ms:.3f}"])

    paths["summary"] = out / f"{name}_summary.csv"
    with open(paths["summary"], "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["method", "x", "statistic", "nerr", "failed"])
        for m in methods:
            for x in xs:
                if (m, x) not in summary:
                    continue
                st = summary[(m, x)]
                for s in STATISTICS:
                    w.writerow([m, x, s, repr(st[s]), st["failed"]])

    for s, suffix in zip(STATISTICS, ("med_err", "p25", "p75")):
        paths[s] = out / f"{name}_{suffix}.csv"
        with open(paths[s], "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["xaxis", *methods])
            for x in xs:
                w.writerow([x, *(repr(summary[(m, x)][s]) if (m, x) in summary else "" for m in methods)])
    return paths


def write_policy_csv(path, spec: GridSpec, mdp: TabularMdp, q, q_star=None) -> None:
    """Per-state greedy action and value, enough to redraw the arrow/heat-map figure."""
    Q = unvec(q, mdp.num_states)
    Qs = None if q_star is None else unvec(q_star, mdp.num_states)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["state", "row", "col", "kind", "action", "action_name", "value", "optimal"])
        for s in range(mdp.num_states):
            cell = spec.cell(s)
            kind = ("cliff" if cell in spec.cliff_cells else "start" if cell == spec.start
                    else "goal" if cell == spec.goal else "free")
            a = int(np.argmax(Q[s]))
            optimal = "" if Qs is None else int(Qs[s, a] >= Qs[s].max() - 1e-6 * max(1.0, abs(Qs[s].max())))
            w.writerow([s, cell[0], cell[1], kind, a, ACTION_NAMES[a], repr(float(Q[s, a])), optimal])


def optimal_action_fraction(q, q_star, num_states, states) -> float:
    """Share of ``states`` whose greedy action under ``q`` is optimal under ``q_star``."""
    Q, Qs = unvec(q, num_states), unvec(q_star, num_states)
    a = np.argmax(Q, axis=1)
    best = Qs.max(axis=1)
    ok = Qs[np.arange(num_states), a] >= best - 1e-6 * np.maximum(1.0, np.abs(best))
    return float(np.mean(ok[np.asarray(states)]))


def run_experiment(config: ExperimentConfig, out_dir=None, jobs: int = 1) -> dict:
    """Run the configured sweep and write all CSV outputs."""
    out = Path(out_dir or config.output_dir)
    name = config.sweep_variable
    rows, q_hats = run_sweep(config, jobs, keep_q=True)
    paths = write_results(rows, out, name)
    source, target = _environments(config)
    q_star = checked_optimum(target)
    bn = [k for k in q_hats if k[0].startswith("BN-WS")] or [k for k in q_hats if k[0].startswith("BN")]
    if bn:
        key = max(bn, key=lambda k: (k[1], k[0]))
        spec = config.transfer_target if name == "transfer" else config.grid
        env = "target" if name == "transfer" else "source"
        paths["policy"] = out / f"policy_{env}.csv"
        write_policy_csv(paths["policy"], spec, target, q_hats[key], q_star)
    (out / f"{name}_config.json").write_text(json.dumps(config.to_dict(), indent=1))
    return paths
