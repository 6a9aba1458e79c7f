"""Actor-critic baseline: a TAG-GCN-shaped actor trained through a frozen ratio critic."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Adam, Graph, Node, backward, evaluate
from .reward import (
    DayObservation, Encoded, InputNodes, RewardModels, encode, head_output, init_params, register, state_vector,
)
from .network import NetworkGraph


@dataclass(frozen=True)
class ActorConfig:
    epochs: int = 200
    lr: float = 1e-2
    lambda_actor: float = 1e-4
    max_delta: float = 5.0
    seed: int = 0


@dataclass
class Actor:
    params: dict[str, np.ndarray]
    max_delta: float
    history: list[float] = field(default_factory=list)


def init_actor(critic: RewardModels, rng: np.random.Generator, max_delta: float = 5.0) -> Actor:
    """Backbone shaped like the critic's, plus a scalar action head."""
    params = init_params(critic.cfg, rng)
    del params["head"]
    params.pop("head_in", None)
    params["act"] = rng.standard_normal((critic.cfg.state_dim + 1, 1)) * 0.1
    params["act"][-1] = 0.0
    return Actor(params, max_delta)


def action_node(g: Graph, p: dict[str, Node], inp: InputNodes, variant: str, max_delta: float) -> Node:
    """lo + (hi - lo) * sigmoid(w . [s; 1]) with [lo, hi] = [-max_delta, max_delta]."""
    s = state_vector(g, p, inp, variant)
    sig = g.sigmoid(g.affine(s, p["act"]))
    rows = sig.shape[0]
    return g.add(g.scale(sig, 2.0 * max_delta), g.const(np.full((rows, 1), -max_delta)))


@dataclass
class ActorProblem:
    graph: Graph
    loss: Node
    actions: Node


def build_actor_problem(actor_params, critic: RewardModels, enc: Encoded, lam: float, max_delta: float,
                        frozen_actor: bool = False) -> ActorProblem:
    g = Graph()
    rows = enc.beta.shape[0]
    inp = InputNodes.build(g, enc, np.zeros(rows))
    pa = register(g, "actor", actor_params, frozen=frozen_actor)
    a_hat = action_node(g, pa, inp, critic.cfg.variant, max_delta)
    pc = register(g, "critic", critic.params["beta"], frozen=True)
    s_c = state_vector(g, pc, inp, critic.cfg.variant)
    beta_hat = g.scale(head_output(g, pc, s_c, g.scale(a_hat, 1.0 / critic.cfg.action_scale)),
                       critic.prep.target_scale["beta"])
    gap = g.add(g.const(np.ones((rows, 1))), g.scale(beta_hat, -1.0))
    fit = g.mean_rows(g.sqrt_abs(gap), [range(rows)])
    loss = fit
    if lam:
        loss = g.add(fit, g.scale(g.total([g.sumsq(w) for w in pa.values()]), lam))
    return ActorProblem(g, loss, a_hat)


def train_actor(critic: RewardModels, buffer: list[DayObservation], graph: NetworkGraph,
                cfg: ActorConfig = ActorConfig()) -> Actor:
    """Minimise mean sqrt|1 - beta_hat(a_hat)| + lambda ||theta||^2 with the critic frozen."""
    if not buffer:
        raise ValueError("empty buffer")
    enc = Encoded.stack([encode(o, critic.prep, graph, critic.cfg) for o in buffer])
    actor = init_actor(critic, np.random.default_rng(cfg.seed), cfg.max_delta)
    prob = build_actor_problem(actor.params, critic, enc, cfg.lambda_actor, cfg.max_delta)
    opt = Adam(lr=cfg.lr)
    for _ in range(cfg.epochs):
        actor.history.append(float(evaluate(prob.graph, prob.loss)[0, 0]))
        opt.step(prob.graph.params, backward(prob.graph, prob.loss))
    actor.history.append(float(evaluate(prob.graph, prob.loss)[0, 0]))
    actor.params = {k.partition(".")[2]: v.copy() for k, v in prob.graph.params.items()}
    return actor


def actor_forward(actor: Actor, critic: RewardModels, obs: DayObservation, graph: NetworkGraph) -> np.ndarray:
    """Continuous per-cell deltas in [-max_delta, max_delta]."""
    enc = encode(obs, critic.prep, graph, critic.cfg)
    g = Graph()
    inp = InputNodes.build(g, enc, np.zeros(graph.n))
    pa = register(g, "actor", actor.params, frozen=True)
    return evaluate(g, action_node(g, pa, inp, critic.cfg.variant, actor.max_delta))[:, 0]
