"""Reward models predicting next-day throughput ratio and throughput.

Four variants share one forward builder:

* ``MLP``      state from [beta; x]            (centre cell only)
* ``GCN``      state from [beta; x; h_gcn]     (one mean over graph neighbours)
* ``AG-GCN``   state from [beta; x; h]         (augmented, auto-grouped neighbours)
* ``TAG-GCN``  state from [beta; c; h]         (c = RNN over intra-day blocks)

Both heads read [s; a] where ``a`` is the day-over-day A2 delta, pass it
through one tanh layer (``head_hidden`` units; 0 skips it) and emit
softplus(.) times a positive target scale. Without the hidden layer the
prediction is monotone in ``a``, so its argmax always sits on a bound.
"""
from __future__ import annotations

import ast
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import Adam, Graph, Node, backward, evaluate
from .latent import N_GROUPS, LatentMapper, augment_all, fit_latent_mapper, group_neighbors, pool_groups
from .network import N_FEATURES, TRAFFIC, USERS, NetworkGraph, temporal_blocks, throughput_ratios

VARIANTS = ("MLP", "GCN", "AG-GCN", "TAG-GCN")
TARGETS = ("beta", "alpha")
SOFTPLUS_INV_1 = math.log(math.e - 1.0)


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "TAG-GCN"
    epochs: int = 300
    lr: float = 1e-3
    lambda_ratio: float = 1e-4
    lambda_thr: float = 1e-4
    k: int = 4
    hidden: int = 16
    group_dim: int = 4
    state_dim: int = 16
    head_hidden: int = 8
    n_cap: int | None = None
    fill: str = "average"
    action_scale: float = 5.0
    validate: bool = True
    log_counts: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.epochs < 1 or self.head_hidden < 0:
            raise ValueError("epochs must be >= 1 and head_hidden >= 0")
        if self.lambda_ratio < 0 or self.lambda_thr < 0:
            raise ValueError("regularisation weights must be >= 0")
        if self.fill not in ("average", "zeros"):
            raise ValueError("fill must be 'average' or 'zeros'")


@dataclass
class DayObservation:
    """Everything measured on one day under that day's A2 configuration."""

    day: int
    a2: np.ndarray  # (n,)
    hourly: np.ndarray  # (24, n, d)
    alpha: np.ndarray  # (n,) daily mean throughput
    beta: np.ndarray  # (n,)

    @property
    def mean_features(self) -> np.ndarray:
        return self.hourly.mean(axis=0)

    def blocks(self, k: int) -> np.ndarray:
        return temporal_blocks(self.hourly, k)


def observe(day: int, a2, hourly_features, hourly_throughput, graph: NetworkGraph) -> DayObservation:
    alpha = np.asarray(hourly_throughput, dtype=float).mean(axis=0)
    return DayObservation(day, np.asarray(a2, dtype=float), np.asarray(hourly_features, dtype=float),
                          alpha, throughput_ratios(alpha, graph.adjacency))


def transform_counts(features, enabled: bool = True) -> np.ndarray:
    """log1p on the heavy-tailed user and traffic columns."""
    out = np.array(features, dtype=float)
    if enabled:
        out[..., [USERS, TRAFFIC]] = np.log1p(np.maximum(out[..., [USERS, TRAFFIC]], 0.0))
    return out


@dataclass(frozen=True)
class Preprocessor:
    feature_mean: np.ndarray
    feature_std: np.ndarray
    mapper: LatentMapper
    target_scale: dict

    @classmethod
    def fit(cls, buffer: list[DayObservation], log_counts: bool = True) -> "Preprocessor":
        rows = transform_counts(np.concatenate([o.mean_features for o in buffer]), log_counts)
        mean = rows.mean(axis=0)
        std = rows.std(axis=0)
        std = np.where(std > 1e-12, std, 1.0)
        targets = buffer[1:] if len(buffer) > 1 else buffer
        scale = {
            "beta": float(np.mean(np.concatenate([o.beta for o in targets]))),
            "alpha": float(np.mean(np.concatenate([o.alpha for o in targets]))),
        }
        scale = {k: (v if v > 0 else 1.0) for k, v in scale.items()}
        return cls(mean, std, fit_latent_mapper(rows), scale)


@dataclass
class Encoded:
    """Model inputs for all cells of one day (rows = cells)."""

    beta: np.ndarray  # (n, 1)
    x: np.ndarray  # (n, d)
    seq: np.ndarray  # (n, K, d)
    groups: np.ndarray  # (4, n, d)
    gcn: np.ndarray  # (n, d)

    def repeat(self, times: int) -> "Encoded":
        """Repeat every row ``times`` times consecutively."""
        return Encoded(
            np.repeat(self.beta, times, axis=0), np.repeat(self.x, times, axis=0),
            np.repeat(self.seq, times, axis=0), np.repeat(self.groups, times, axis=1),
            np.repeat(self.gcn, times, axis=0),
        )

    @staticmethod
    def stack(parts: list["Encoded"]) -> "Encoded":
        return Encoded(
            np.concatenate([p.beta for p in parts]), np.concatenate([p.x for p in parts]),
            np.concatenate([p.seq for p in parts]), np.concatenate([p.groups for p in parts], axis=1),
            np.concatenate([p.gcn for p in parts]),
        )


def encode(obs: DayObservation, prep: Preprocessor, graph: NetworkGraph, cfg: TrainConfig) -> Encoded:
    mean = transform_counts(obs.mean_features, cfg.log_counts)
    x = (mean - prep.feature_mean) / prep.feature_std
    seq = (transform_counts(obs.blocks(cfg.k), cfg.log_counts) - prep.feature_mean) / prep.feature_std
    n = graph.n
    groups = np.zeros((N_GROUPS, n, N_FEATURES))
    gcn = np.zeros((n, N_FEATURES))
    if cfg.variant in ("AG-GCN", "TAG-GCN"):
        coords = prep.mapper(mean)
        for v, nb in enumerate(augment_all(graph.adjacency, coords, cfg.n_cap)):
            grouped = group_neighbors(coords, v, nb.union)
            groups[:, v] = pool_groups(x, grouped, cfg.fill)
    if cfg.variant == "GCN":
        deg = graph.degrees
        s = graph.adjacency.astype(float) @ x
        gcn = np.divide(s, deg[:, None], out=np.zeros_like(s), where=deg[:, None] > 0)
    return Encoded(obs.beta[:, None].copy(), x, seq, groups, gcn)


# ---------------------------------------------------------------------------
# Parameters and forward pass


def param_shapes(cfg: TrainConfig) -> dict[str, tuple[int, int]]:
    d, v = N_FEATURES, cfg.variant
    shapes: dict[str, tuple[int, int]] = {}
    centre = cfg.hidden if v == "TAG-GCN" else d
    width = 1 + centre
    if v == "TAG-GCN":
        shapes["rnn_in"] = (d + 1, cfg.hidden)
        shapes["rnn_h"] = (cfg.hidden, cfg.hidden)
    if v == "GCN":
        shapes["gcn"] = (d + 1, N_GROUPS * cfg.group_dim)
        width += N_GROUPS * cfg.group_dim
    if v in ("AG-GCN", "TAG-GCN"):
        for k in range(1, N_GROUPS + 1):
            shapes[f"group{k}"] = (d + 1, cfg.group_dim)
        width += N_GROUPS * cfg.group_dim
    shapes["state"] = (width + 1, cfg.state_dim)
    if cfg.head_hidden:
        shapes["head_in"] = (cfg.state_dim + 2, cfg.head_hidden)
        shapes["head"] = (cfg.head_hidden + 1, 1)
    else:
        shapes["head"] = (cfg.state_dim + 2, 1)
    return shapes


def init_params(cfg: TrainConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    params = {}
    for name, (r, c) in param_shapes(cfg).items():
        w = rng.standard_normal((r, c)) / math.sqrt(r)
        if name == "rnn_h":
            w *= 0.5
        else:
            w[-1] = 0.0  # bias row of an affine map
        if name == "head":
            w *= 0.1
            w[-1] = SOFTPLUS_INV_1
        params[name] = w
    return params


@dataclass
class InputNodes:
    beta: Node
    x: Node
    seq: list[Node]
    groups: list[Node]
    gcn: Node
    action: Node

    @classmethod
    def build(cls, g: Graph, enc: Encoded, action: np.ndarray) -> "InputNodes":
        return cls(
            g.const(enc.beta), g.const(enc.x), [g.const(enc.seq[:, k]) for k in range(enc.seq.shape[1])],
            [g.const(enc.groups[k]) for k in range(N_GROUPS)], g.const(enc.gcn),
            g.const(np.asarray(action, dtype=float).reshape(-1, 1)),
        )


def state_vector(g: Graph, p: dict[str, Node], inp: InputNodes, variant: str) -> Node:
    parts = [inp.beta]
    if variant == "TAG-GCN":
        rows = inp.beta.shape[0]
        h = g.const(np.zeros((rows, p["rnn_h"].shape[0])))
        for xk in inp.seq:
            h = g.tanh(g.add(g.affine(xk, p["rnn_in"]), g.matmul(h, p["rnn_h"])))
        parts.append(h)
    else:
        parts.append(inp.x)
    if variant == "GCN":
        parts.append(g.tanh(g.affine(inp.gcn, p["gcn"])))
    if variant in ("AG-GCN", "TAG-GCN"):
        parts.extend(g.tanh(g.affine(inp.groups[k], p[f"group{k + 1}"])) for k in range(N_GROUPS))
    return g.tanh(g.affine(g.concat(parts), p["state"]))


def head_output(g: Graph, p: dict[str, Node], s: Node, action: Node) -> Node:
    """softplus(W_head [z; 1]) with z = tanh(W_in [s; a; 1]) or z = [s; a], before target scaling."""
    z = g.concat([s, action])
    if "head_in" in p:
        z = g.tanh(g.affine(z, p["head_in"]))
    return g.softplus(g.affine(z, p["head"]))


def register(g: Graph, prefix: str, params: dict[str, np.ndarray], frozen: bool = False) -> dict[str, Node]:
    if frozen:
        return {k: g.const(v, name=f"{prefix}.{k}") for k, v in params.items()}
    return {k: g.param(f"{prefix}.{k}", v) for k, v in params.items()}


# ---------------------------------------------------------------------------
# Trained models


@dataclass
class RewardModels:
    """A throughput-ratio model and a throughput model sharing preprocessing."""

    cfg: TrainConfig
    prep: Preprocessor
    params: dict[str, dict[str, np.ndarray]]  # target -> name -> matrix
    history: dict[str, list[float]] = field(default_factory=dict)

    def predict(self, obs: DayObservation, graph: NetworkGraph, deltas) -> tuple[np.ndarray, np.ndarray]:
        """Predicted next-day (beta, alpha) per cell; ``deltas`` is (n,)."""
        enc = encode(obs, self.prep, graph, self.cfg)
        a = np.asarray(deltas, dtype=float) / self.cfg.action_scale
        out = self._forward(enc, a)
        return out["beta"][:, 0], out["alpha"][:, 0]

    def predict_grid(self, obs: DayObservation, graph: NetworkGraph, grid) -> tuple[np.ndarray, np.ndarray]:
        """(n, len(grid)) predictions for every delta in ``grid``."""
        grid = np.asarray(grid, dtype=float)
        enc = encode(obs, self.prep, graph, self.cfg).repeat(grid.size)
        a = np.tile(grid, graph.n) / self.cfg.action_scale
        out = self._forward(enc, a)
        return out["beta"].reshape(graph.n, grid.size), out["alpha"].reshape(graph.n, grid.size)

    def _forward(self, enc: Encoded, a: np.ndarray) -> dict[str, np.ndarray]:
        g = Graph()
        inp = InputNodes.build(g, enc, a)
        out = {}
        for target in TARGETS:
            p = register(g, target, self.params[target], frozen=True)
            y = head_output(g, p, state_vector(g, p, inp, self.cfg.variant), inp.action)
            out[target] = evaluate(g, y) * self.prep.target_scale[target]
        return out

    # -- serialisation --------------------------------------------------
    def save(self, path) -> None:
        write_params(path, self.to_matrices(), {"variant": self.cfg.variant, "config": asdict(self.cfg)})

    def to_matrices(self) -> dict[str, np.ndarray]:
        m = {
            "prep.feature_mean": self.prep.feature_mean[None, :],
            "prep.feature_std": self.prep.feature_std[None, :],
            "prep.mapper_mean": self.prep.mapper.mean[None, :],
            "prep.mapper_std": self.prep.mapper.std[None, :],
            "prep.mapper_components": self.prep.mapper.components,
            "prep.target_scale": np.array([[self.prep.target_scale["beta"], self.prep.target_scale["alpha"]]]),
        }
        for target in TARGETS:
            for name, w in self.params[target].items():
                m[f"{target}.{name}"] = w
        return m

    @classmethod
    def load(cls, path) -> "RewardModels":
        mats, meta = read_params(path)
        cfg_dict = meta["config"]
        cfg = TrainConfig(**cfg_dict)
        mapper = LatentMapper(mats["prep.mapper_mean"][0], mats["prep.mapper_std"][0], mats["prep.mapper_components"])
        ts = mats["prep.target_scale"][0]
        prep = Preprocessor(mats["prep.feature_mean"][0], mats["prep.feature_std"][0], mapper,
                            {"beta": float(ts[0]), "alpha": float(ts[1])})
        params = {t: {} for t in TARGETS}
        for key, w in mats.items():
            head, _, name = key.partition(".")
            if head in params:
                params[head][name] = w
        return cls(cfg, prep, params)


def make_pairs(buffer: list[DayObservation]) -> list[tuple[DayObservation, DayObservation]]:
    pairs = []
    for a, b in zip(buffer, buffer[1:]):
        if b.day != a.day + 1:
            raise ValueError(f"buffer days not consecutive: {a.day}, {b.day}")
        pairs.append((a, b))
    return pairs


@dataclass
class TrainingProblem:
    """Graph with both models' parameters and the joint loss, built once."""

    graph: Graph
    losses: dict[str, Node]
    total: Node
    fits: dict[str, Node]


def build_problem(pairs, graph: NetworkGraph, prep: Preprocessor, cfg: TrainConfig,
                  init: dict[str, dict[str, np.ndarray]]) -> TrainingProblem:
    enc = Encoded.stack([encode(a, prep, graph, cfg) for a, _ in pairs])
    action = np.concatenate([(b.a2 - a.a2) for a, b in pairs]) / cfg.action_scale
    g = Graph()
    inp = InputNodes.build(g, enc, action)
    losses, fits = {}, {}
    lam = {"beta": cfg.lambda_ratio, "alpha": cfg.lambda_thr}
    for target in TARGETS:
        y = np.concatenate([getattr(b, target) for _, b in pairs]) / prep.target_scale[target]
        p = register(g, target, init[target])
        pred = head_output(g, p, state_vector(g, p, inp, cfg.variant), inp.action)
        fit = fits[target] = g.mse(pred, g.const(y))
        reg = g.scale(g.total([g.sumsq(w) for w in p.values()]), lam[target])
        losses[target] = g.add(fit, reg)
    total = g.add(losses["beta"], losses["alpha"])
    return TrainingProblem(g, losses, total, fits)


def _fit(pairs, graph, prep, cfg, start, stop: dict[str, int], val_pairs=None):
    """Adam on the joint loss; each target's weights are snapshot at ``stop[target]``.

    Targets have disjoint parameters, so one target's trajectory does not
    depend on when the other is snapshot. With ``val_pairs`` the returned
    ``best`` maps each target to the step with the lowest validation MSE.
    """
    prob = build_problem(pairs, graph, prep, cfg, start)
    val = None
    if val_pairs:
        val = build_problem(val_pairs, graph, prep, cfg, start)
        val.graph.params = prob.graph.params  # evaluate against the live weights
    opt = Adam(lr=cfg.lr)
    history = {t: [] for t in TARGETS}
    val_hist = {t: [] for t in TARGETS}
    params: dict[str, dict[str, np.ndarray]] = {}
    last = max(stop.values())
    for step in range(last + 1):
        evaluate(prob.graph, prob.total)
        if val is not None:
            evaluate(val.graph, val.total)
        for t in TARGETS:
            if step <= stop[t]:
                history[t].append(float(prob.losses[t].value[0, 0]))
            if val is not None:
                val_hist[t].append(float(val.fits[t].value[0, 0]))
            if step == stop[t]:
                params[t] = {k.partition(".")[2]: w.copy() for k, w in prob.graph.params.items()
                             if k.partition(".")[0] == t}
        if step < last:
            opt.step(prob.graph.params, backward(prob.graph, prob.total))
    best = {t: int(np.argmin(val_hist[t])) for t in TARGETS} if val is not None else None
    return params, history, best


def train(buffer: list[DayObservation], graph: NetworkGraph, cfg: TrainConfig,
          init: RewardModels | None = None) -> RewardModels:
    """Full-batch joint training of the ratio and throughput models.

    The latent mapper and normalisation are refit on ``buffer``. ``init``
    warm-starts the weights from an earlier model of the same variant.
    With ``cfg.validate`` and at least two pairs, the last pair is held out
    to pick each target's epoch count, then all pairs are refit.
    """
    if len(buffer) < 2:
        raise ValueError("training needs at least one (t, t+1) day pair")
    pairs = make_pairs(buffer)
    prep = Preprocessor.fit(buffer, cfg.log_counts)
    rng = np.random.default_rng(cfg.seed)
    if init is not None:
        start = {t: {k: v.copy() for k, v in init.params[t].items()} for t in TARGETS}
    else:
        start = {t: init_params(cfg, rng) for t in TARGETS}
    stop = {t: cfg.epochs for t in TARGETS}
    if cfg.validate and len(pairs) >= 2:
        _, _, stop = _fit(pairs[:-1], graph, prep, cfg, start, stop, pairs[-1:])
    params, history, _ = _fit(pairs, graph, prep, cfg, start, stop)
    return RewardModels(cfg, prep, params, history)


def evaluate_mse(models, test_pair, graph: NetworkGraph) -> tuple[float, float]:
    """Per-target MSE of next-day predictions over all cells of one pair.

    ``models`` is anything with ``predict(obs, graph, deltas)``.
    """
    a, b = test_pair
    beta_hat, alpha_hat = models.predict(a, graph, b.a2 - a.a2)
    return float(np.mean((beta_hat - b.beta) ** 2)), float(np.mean((alpha_hat - b.alpha) ** 2))


# ---------------------------------------------------------------------------
# Flat named-matrix files
#
# Line 1: "# a2tune-params 1"; "# key=value" lines carry metadata (values
# are Python literals); then one line per matrix:
#   name rows cols v11 v12 ... (row-major, repr() floats, exact round-trip)


def write_params(path, matrices: dict[str, np.ndarray], meta: dict | None = None) -> None:
    lines = ["# a2tune-params 1"]
    for k, v in (meta or {}).items():
        lines.append(f"# {k}={v!r}")
    for name in sorted(matrices):
        w = np.asarray(matrices[name], dtype=float)
        if w.ndim != 2:
            raise ValueError(f"{name}: expected a matrix, got shape {w.shape}")
        vals = " ".join(repr(float(x)) for x in w.ravel())
        lines.append(f"{name} {w.shape[0]} {w.shape[1]} {vals}".rstrip())
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_params(path) -> tuple[dict[str, np.ndarray], dict]:
    mats, meta = {}, {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                k, _, v = body.partition("=")
                meta[k] = ast.literal_eval(v)
            continue
        parts = line.split()
        name, r, c = parts[0], int(parts[1]), int(parts[2])
        vals = [float(x) for x in parts[3:]]
        if len(vals) != r * c:
            raise ValueError(f"{path}:{lineno}: {name} expects {r * c} values, got {len(vals)}")
        mats[name] = np.array(vals, dtype=float).reshape(r, c)
    return mats, meta


def models_equal(a: RewardModels, b: RewardModels) -> bool:
    ma, mb = a.to_matrices(), b.to_matrices()
    return ma.keys() == mb.keys() and all(np.array_equal(ma[k], mb[k]) for k in ma)


def with_variant(cfg: TrainConfig, variant: str) -> TrainConfig:
    return replace(cfg, variant=variant)

