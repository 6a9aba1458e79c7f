"""Closed-loop optimisation, MSE evaluation and report files."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats as sps

from .actions import (
    ActionPlan, expert_rule, negative_slope_init, random_init, recommend, round_half_away, write_plans_csv,
)
from .actor_critic import actor_forward, train_actor
from .config import ExperimentConfig, Policy, dump_config, load_config
from .network import NetworkData, NetworkGraph, build_graph, generate_synthetic, load_dataset
from .reward import TARGETS, DayObservation, evaluate_mse, observe, train
from .simulator import CellModel, Simulator

log = logging.getLogger(__name__)

TRAJECTORY_HEADER = ["day", "policy", "repeat", "network_throughput", "diff_to_default"]
MSE_HEADER = ["day", "variant", "target", "mse"]
RATIO_HEADER = ["day", "cell_id", "beta", "imbalance"]


class HarnessError(RuntimeError):
    pass


@dataclass
class Setup:
    data: NetworkData
    graph: NetworkGraph
    sim: Simulator


def prepare(cfg: ExperimentConfig, days: int) -> Setup:
    """Network, graph and simulator; synthetic data use ``cfg.seed``."""
    if cfg.data_dir:
        records, stats = load_dataset(cfg.data_dir, (cfg.grid.lo, cfg.grid.hi))
        data = NetworkData.from_records(records)
        if data.days < days:
            raise HarnessError(f"{cfg.data_dir} holds {data.days} days, the run needs {days}")
    else:
        net = generate_synthetic(replace(cfg.network, days=days, seed=cfg.seed))
        data, stats = net.data, net.stats
    graph = build_graph(stats, data.cells, cfg.tau)
    return Setup(data, graph, Simulator(graph, CellModel.from_data(data, cfg.simulator), cfg.simulator))


def repeat_seeds(seed: int, repeat: int) -> tuple[int, int]:
    """(initialisation seed, model seed) for one repeat; shared by every arm."""
    a, b = np.random.SeedSequence([seed, repeat]).generate_state(2)
    return int(a), int(b)


# ---------------------------------------------------------------------------
# Closed loop


@dataclass
class Arm:
    policy: Policy
    a2: list[np.ndarray] = field(default_factory=list)
    obs: list[DayObservation] = field(default_factory=list)
    throughput: list[float] = field(default_factory=list)
    plans: list[ActionPlan] = field(default_factory=list)
    models: object = None
    mse: list[tuple[int, float, float]] = field(default_factory=list)


@dataclass
class RepeatTrace:
    repeat: int
    arms: dict[str, Arm]


def _observe(setup: Setup, day: int, a2) -> tuple[DayObservation, float]:
    feats, thr = setup.sim.step(setup.data.features[day - 1], a2)
    obs = observe(day, a2, feats, thr, setup.graph)
    return obs, float(obs.alpha.sum())


def _next_a2(arm: Arm, cfg: ExperimentConfig, setup: Setup, day: int, init_a2: np.ndarray,
             model_seed: int) -> np.ndarray:
    """A2 configuration an arm applies on ``day`` (>= 2); the optimal arm is handled separately."""
    pol = arm.policy
    prev = arm.obs[-1]
    grid = cfg.grid
    if pol.kind == "default":
        return np.full(setup.graph.n, float(grid.default))
    if day == 2:
        if pol.init == "negative-slope":
            return prev.a2 + negative_slope_init(prev.beta, prev.a2, grid, cfg.phi)
        return init_a2.copy()
    if pol.kind == "expert":
        return prev.a2 + expert_rule(prev.beta, prev.a2, grid, cfg.expert_r1, cfg.expert_r2)

    train_cfg = replace(cfg.train, variant=pol.variant, seed=model_seed)
    frozen = cfg.freeze_after_day is not None and day - 1 > cfg.freeze_after_day
    if arm.models is None or not frozen:
        init = arm.models if cfg.warm_start else None
        arm.models = train(arm.obs, setup.graph, train_cfg, init=init)
    if pol.kind == "actor-critic":
        actor = train_actor(arm.models, arm.obs, setup.graph, replace(cfg.actor, max_delta=grid.max_delta, seed=model_seed))
        raw = actor_forward(actor, arm.models, prev, setup.graph)
        return prev.a2 + grid.clamp(prev.a2, round_half_away(raw))
    plan = recommend(arm.models, prev, setup.graph, grid, cfg.nu, pol.mode)
    return plan.a2


def run_repeat(cfg: ExperimentConfig, setup: Setup, repeat: int) -> RepeatTrace:
    init_seed, model_seed = repeat_seeds(cfg.seed, repeat)
    n = setup.graph.n
    init_a2 = random_init(n, cfg.grid, init_seed)
    arms = {p.name: Arm(p) for p in cfg.parsed_policies}
    default = np.full(n, float(cfg.grid.default))
    for day in range(1, cfg.days + 1):
        for arm in arms.values():
            if arm.policy.kind == "optimal":
                continue
            a2 = default if day == 1 else _next_a2(arm, cfg, setup, day, init_a2, model_seed)
            if day > 1:
                arm.plans.append(ActionPlan.from_delta(setup.data.cells, day, arm.a2[-1], a2 - arm.a2[-1]))
            obs, total = _observe(setup, day, a2)
            if arm.models is not None and arm.policy.kind == "model" and day > 2:
                arm.mse.append((day, *evaluate_mse(arm.models, (arm.obs[-1], obs), setup.graph)))
            arm.a2.append(a2)
            arm.obs.append(obs)
            arm.throughput.append(total)
        for arm in arms.values():
            if arm.policy.kind == "optimal":
                _optimal_day(arm, arms, cfg, setup, day)
        log.info("repeat %d day %d: %s", repeat, day,
                 ", ".join(f"{k}={a.throughput[-1]:.3f}" for k, a in arms.items()))
    return RepeatTrace(repeat, arms)


def _optimal_day(arm: Arm, arms: dict[str, Arm], cfg: ExperimentConfig, setup: Setup, day: int) -> None:
    """Coordinate ascent from the default and from every other arm's configuration, best kept."""
    states = setup.data.features[day - 1]
    starts = [np.full(setup.graph.n, float(cfg.grid.default))]
    starts += [a.a2[-1] for a in arms.values() if a is not arm]
    best, best_val = None, -math.inf
    for s in starts:
        cand = setup.sim.brute_force_optimal(states, cfg.grid.values, cfg.optimal_sweeps, start=s)
        val = setup.sim.network_throughput(states, cand)
        if val > best_val:
            best, best_val = cand, val
    prev = arm.a2[-1] if arm.a2 else best
    if day > 1:
        arm.plans.append(ActionPlan.from_delta(setup.data.cells, day, prev, best - prev))
    obs, total = _observe(setup, day, best)
    arm.a2.append(best)
    arm.obs.append(obs)
    arm.throughput.append(total)


@dataclass
class ClosedLoopResult:
    cfg: ExperimentConfig
    cells: tuple[str, ...]
    traces: list[RepeatTrace]

    def trajectory_rows(self) -> list[list]:
        rows = []
        for tr in self.traces:
            base = tr.arms["default"].throughput if "default" in tr.arms else None
            for name, arm in tr.arms.items():
                for d, v in enumerate(arm.throughput, start=1):
                    diff = v - base[d - 1] if base is not None else float("nan")
                    rows.append([d, name, tr.repeat, v, diff])
        return rows

    def mse_rows(self) -> list[list]:
        """Closed-loop prediction error of each model arm, averaged over repeats."""
        acc: dict[tuple[int, str, str], list[float]] = {}
        for tr in self.traces:
            for name, arm in tr.arms.items():
                for day, mb, ma in arm.mse:
                    acc.setdefault((day, name, "beta"), []).append(mb)
                    acc.setdefault((day, name, "alpha"), []).append(ma)
        return [[d, v, t, float(np.mean(x))] for (d, v, t), x in sorted(acc.items())]

    def primary_arm(self) -> str | None:
        names = list(self.traces[0].arms)
        if "TAG-GCN" in names:
            return "TAG-GCN"
        models = [n for n in names if self.traces[0].arms[n].policy.kind == "model"]
        return models[0] if models else None

    def unbalanced_cells(self, arm: str) -> np.ndarray:
        """The ``cfg.clusters`` cells with largest day-1 |1 - beta| (repeat 0), ties to lower index."""
        beta = self.traces[0].arms[arm].obs[0].beta
        return np.lexsort((np.arange(beta.size), -np.abs(1.0 - beta)))[: self.cfg.clusters]

    def ratio_rows(self) -> list[list]:
        arm = self.primary_arm()
        if arm is None:
            return []
        idx = self.unbalanced_cells(arm)
        rows = []
        for d in range(self.cfg.days):
            betas = np.array([tr.arms[arm].obs[d].beta[idx] for tr in self.traces])
            for j, c in enumerate(idx):
                rows.append([d + 1, self.cells[c], float(betas[:, j].mean()),
                             float(np.abs(1.0 - betas[:, j]).mean())])
        return rows


def run_closed_loop(cfg: ExperimentConfig) -> ClosedLoopResult:
    if not cfg.policies:
        raise HarnessError("no policies to run")
    setup = prepare(cfg, cfg.days)
    traces = [run_repeat(cfg, setup, r) for r in range(cfg.repeats)]
    return ClosedLoopResult(cfg, setup.data.cells, traces)


# ---------------------------------------------------------------------------
# MSE evaluation


@dataclass
class MseResult:
    variants: tuple[str, ...]
    days: list[int]
    mse: dict[str, np.ndarray]  # target -> (variants, days)

    def ranks(self, target: str) -> np.ndarray:
        """Per-day ranks (1 = lowest MSE, ties averaged), shape (variants, days)."""
        return np.apply_along_axis(sps.rankdata, 0, self.mse[target])

    def average_rank(self, target: str) -> np.ndarray:
        return self.ranks(target).mean(axis=1)

    def rows(self) -> list[list]:
        return [[d, v, t, float(self.mse[t][i, j])]
                for j, d in enumerate(self.days) for i, v in enumerate(self.variants) for t in TARGETS]

    def rank_rows(self) -> list[list]:
        return [[v, t, float(self.average_rank(t)[i]), float(self.mse[t][i].mean())]
                for t in TARGETS for i, v in enumerate(self.variants)]


def random_action_buffer(cfg: ExperimentConfig, setup: Setup, days: int) -> list[DayObservation]:
    """Observations under a fresh uniform random A2 draw on every day."""
    ss = np.random.SeedSequence([cfg.seed, 1 << 20])
    seeds = ss.generate_state(days)
    buf = []
    for d in range(1, days + 1):
        a2 = random_init(setup.graph.n, cfg.grid, int(seeds[d - 1]))
        buf.append(_observe(setup, d, a2)[0])
    return buf


def run_mse_eval(cfg: ExperimentConfig, extra: dict | None = None) -> MseResult:
    """Train on pairs before ``t - 1`` and test on ``(t - 1, t)`` for t = 3..days.

    ``extra`` maps names to callables ``(train_buffer, graph) -> predictor``
    with a ``predict(obs, graph, deltas)`` method, ranked alongside the variants.
    """
    days = cfg.mse_days
    if days < 4:
        raise HarnessError(f"MSE evaluation needs at least 4 days, got {days}")
    setup = prepare(cfg, days)
    if setup.data.days < days:
        raise HarnessError(f"dataset holds {setup.data.days} days, need {days}")
    buf = random_action_buffer(cfg, setup, days)
    names = tuple(cfg.variants) + tuple(extra or {})
    eval_days = list(range(3, days + 1))
    out = {t: np.zeros((len(names), len(eval_days))) for t in TARGETS}
    for j, t in enumerate(eval_days):
        history, test = buf[: t - 1], (buf[t - 2], buf[t - 1])
        for i, name in enumerate(names):
            if name in cfg.variants:
                model = train(history, setup.graph, replace(cfg.train, variant=name))
            else:
                model = extra[name](history, setup.graph)
            mb, ma = evaluate_mse(model, test, setup.graph)
            out["beta"][i, j], out["alpha"][i, j] = mb, ma
        log.info("mse day %d: %s", t, ", ".join(f"{n}={out['beta'][i, j]:.4f}/{out['alpha'][i, j]:.4f}"
                                                for i, n in enumerate(names)))
    return MseResult(names, eval_days, out)


# ---------------------------------------------------------------------------
# Report files


def _fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def read_trajectory(path) -> list[list]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            rows.append([int(r["day"]), r["policy"], int(r["repeat"]),
                         float(r["network_throughput"]), float(r["diff_to_default"])])
    return rows


def mean_ci(values) -> tuple[float, float | None]:
    """Mean and 95% t-interval half-width; None when there is a single value."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise HarnessError("no repeats to summarise")
    if x.size == 1:
        return float(x[0]), None
    half = sps.t.ppf(0.975, x.size - 1) * x.std(ddof=1) / math.sqrt(x.size)
    return float(x.mean()), float(half)


def policy_stats(rows, final_days: int) -> dict[str, dict[str, list[float]]]:
    """Per policy, per repeat: mean over the final days of throughput, ratio to optimal, diff to default."""
    if not rows:
        raise HarnessError("empty trajectory")
    last = max(r[0] for r in rows)
    window = range(last - final_days + 1, last + 1)
    opt = {(r[0], r[2]): r[3] for r in rows if r[1] == "optimal"}
    per: dict[str, dict[int, dict[str, list[float]]]] = {}
    for day, pol, rep, thr, diff in rows:
        if day not in window:
            continue
        bucket = per.setdefault(pol, {}).setdefault(rep, {"throughput": [], "ratio": [], "diff": []})
        bucket["throughput"].append(thr)
        bucket["diff"].append(diff)
        if (day, rep) in opt:
            bucket["ratio"].append(thr / opt[(day, rep)])
    out = {}
    for pol, reps in per.items():
        out[pol] = {k: [float(np.mean(reps[r][k])) for r in sorted(reps) if reps[r][k]]
                    for k in ("throughput", "ratio", "diff")}
    return out


def final_day_throughput(rows) -> dict[str, dict[int, float]]:
    last = max(r[0] for r in rows)
    out: dict[str, dict[int, float]] = {}
    for day, pol, rep, thr, _ in rows:
        if day == last:
            out.setdefault(pol, {})[rep] = thr
    return out


def summary_text(rows, final_days: int, tau: float) -> str:
    st = policy_stats(rows, final_days)
    days = max(r[0] for r in rows)
    repeats = len({r[2] for r in rows})
    buf = io.StringIO()
    buf.write(f"# closed-loop summary: {days} days, {repeats} repeat(s), tau={tau!r}, final {final_days} days\n")
    buf.write("# mean +- 95% t-interval across repeats\n")
    buf.write(f"{'policy':<28} {'ratio_to_optimal':>24} {'throughput':>24} {'diff_to_default':>24}\n")

    def cell(vals):
        if not vals:
            return "n/a"
        m, h = mean_ci(vals)
        return f"{m:.4f}" if h is None else f"{m:.4f} +- {h:.4f}"

    for pol in sorted(st):
        s = st[pol]
        buf.write(f"{pol:<28} {cell(s['ratio']):>24} {cell(s['throughput']):>24} {cell(s['diff']):>24}\n")
    return buf.getvalue()


def emit_closed_loop(result: ClosedLoopResult, out: Path) -> None:
    out = Path(out)
    if not result.traces:
        raise HarnessError("no repeats to report")
    out.mkdir(parents=True, exist_ok=True)
    rows = result.trajectory_rows()
    write_csv(out / "trajectory.csv", TRAJECTORY_HEADER, rows)
    write_csv(out / "mse.csv", MSE_HEADER, result.mse_rows())
    write_csv(out / "ratio_trajectories.csv", RATIO_HEADER, result.ratio_rows())
    (out / "summary.txt").write_text(summary_text(rows, result.cfg.final_days, result.cfg.tau), encoding="utf-8")
    (out / "config.yaml").write_text(dump_config(result.cfg), encoding="utf-8")
    plans = out / "plans"
    plans.mkdir(exist_ok=True)
    for tr in result.traces:
        for name, arm in tr.arms.items():
            safe = name.replace("/", "_").replace("@", "_at_")
            write_plans_csv(plans / f"{safe}_r{tr.repeat}.csv", arm.plans)


def emit_mse(result: MseResult, cfg: ExperimentConfig, out: Path) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "mse.csv", MSE_HEADER, result.rows())
    write_csv(out / "ranks.csv", ["variant", "target", "average_rank", "mean_mse"], result.rank_rows())
    (out / "config.yaml").write_text(dump_config(cfg), encoding="utf-8")


def rerender(run_dir: Path, final_days: int | None = None, tau: float | None = None) -> str:
    """Rebuild summary.txt from trajectory.csv (and config.yaml when present)."""
    run_dir = Path(run_dir)
    rows = read_trajectory(run_dir / "trajectory.csv")
    if (run_dir / "config.yaml").exists():
        cfg = load_config(run_dir / "config.yaml")
        final_days = final_days or cfg.final_days
        tau = cfg.tau if tau is None else tau
    text = summary_text(rows, final_days or 4, 10.0 if tau is None else tau)
    (run_dir / "summary.txt").write_text(text, encoding="utf-8")
    return text
