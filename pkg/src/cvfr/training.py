"""Loss, backpropagation through the unrolled Euler map, Adam, training loop."""

from __future__ import annotations

import csv
import math
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import Checkpoint
from .datasets import LabeledDataset
from .dynamics import IntegrationConfig, damping_factor, damping_factor_grad, draw_noise, hill, hill_prime
from .errors import DimensionError, DivergenceAbort, NonFiniteState, SingularPsi
from .evaluation import accuracy, classify
from .rng import derive_seed, generator
from .spectral import SpectralCoupling, assemble, backprop_assemble, psi_inverse

# stream tags for derive_seed
_SHUFFLE = 1
_NOISE = 2


@dataclass
class TrainConfig:
    # Minibatch gradients are heavy-tailed (rare items near a basin boundary
    # dominate). Larger steps sharpen the coupling until items collapse into
    # the absorbing zero state.
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-2
    batch_size: int = 32
    epochs: int = 120
    integration: IntegrationConfig = field(default_factory=IntegrationConfig)
    grad_clip: float | None = 0.1
    seed: int = 0
    detach_damping: bool = False
    eval_seed: int = 0
    eval_every: int = 1


# 784-node digit models start in large mixed states with batch gradient norms
# in the thousands; clip 0.1 and eps 1e-2 leave them almost frozen.
MNIST_OVERRIDES = {"learning_rate": 1e-4, "adam_eps": 1e-8, "grad_clip": 10.0, "epochs": 30}


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_accuracy: float
    test_accuracy: float
    wall_time: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "train_accuracy", "test_accuracy", "wall_time"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.loss), repr(r.train_accuracy), repr(r.test_accuracy), f"{r.wall_time:.3f}"])


def loss(final_states, targets) -> float:
    """Mean over the batch of |x_j(T) - X_class(j)|^2."""
    x = np.atleast_2d(np.asarray(final_states, dtype=np.float64))
    t = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if x.shape != t.shape:
        raise DimensionError(f"final states {x.shape} vs targets {t.shape}")
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    return float(np.mean(np.sum(np.square(x - t), axis=1)))


@dataclass
class BPTTResult:
    loss: float
    grad_psi: np.ndarray
    grad_eigvals: np.ndarray
    final_states: np.ndarray


def backprop_through_time(
    x0,
    sc: SpectralCoupling,
    cfg: IntegrationConfig,
    targets,
    *,
    attractor_states=None,
    noise=None,
    detach_damping: bool = False,
    psi_inv=None,
) -> BPTTResult:
    """Loss and its gradient w.r.t. the free spectral parameters.

    Forward: x_{t+1} = x_t + dt(-x_t + beta f(x_t) A^T) [+ sqrt(dt) sigma d(x_t) xi_t].
    Backward, with a_T = dL/dx_T:
        a_t = (1 - dt) a_{t+1} + dt beta (a_{t+1} A) * f'(x_t)
              [+ sqrt(dt) sigma <a_{t+1}, xi_t> grad d(x_t)]
        dL/dA = sum_t dt beta a_{t+1}^T f(x_t)
    then routed through the spectral assembly.

    When sigma > 0 the noise path ``noise`` (steps, B, N) must be supplied so
    that the gradient is the pathwise one for that realization.
    """
    x = np.atleast_2d(np.array(x0, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    b, n = x.shape
    if n != sc.n or targets.shape != x.shape:
        raise DimensionError(f"batch {x.shape}, targets {targets.shape}, coupling n={sc.n}")
    noisy = cfg.sigma > 0.0 and cfg.steps > 0
    if noisy:
        if noise is None or attractor_states is None:
            raise ValueError("stochastic BPTT needs the recorded noise and the attractor states")
        noise = np.asarray(noise, dtype=np.float64).reshape(cfg.steps, b, n)
    psi_inv = psi_inverse(sc) if psi_inv is None else psi_inv
    A = assemble(sc, psi_inv)
    beta, dt, c = sc.beta, cfg.dt, sc.c
    scale = math.sqrt(dt) * cfg.sigma

    xs, hs = [x], []
    for t in range(cfg.steps):
        h = hill(x, c)
        hs.append(h)
        x_next = x + dt * (-x + beta * (h @ A.T))
        if noisy:
            x_next = x_next + scale * damping_factor(x, attractor_states)[:, None] * noise[t]
        x = x_next
        if not np.all(np.isfinite(x)):
            raise NonFiniteState(f"forward pass diverged at step {t + 1}", step=t + 1)
        xs.append(x)

    diff = x - targets
    value = float(np.mean(np.sum(diff * diff, axis=1)))
    a = 2.0 * diff / b
    # adjoints a_{t+1} for every step; dL/dA is then a single product
    adj = np.empty((cfg.steps, b, n))
    for t in range(cfg.steps - 1, -1, -1):
        adj[t] = a
        xt = xs[t]
        a_prev = (1.0 - dt) * a + (dt * beta) * (a @ A) * hill_prime(xt, c)
        if noisy and not detach_damping:
            _, gd = damping_factor_grad(xt, attractor_states)
            a_prev += scale * np.sum(a * noise[t], axis=1)[:, None] * gd
        a = a_prev
    if cfg.steps:
        grad_A = (dt * beta) * (adj.reshape(-1, n).T @ np.concatenate(hs))
    else:
        grad_A = np.zeros((n, n))
    grad_psi, grad_eig = backprop_assemble(sc, grad_A, psi_inv)
    return BPTTResult(value, grad_psi, grad_eig, x)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_update(params: dict, grads: dict, state: AdamState, cfg: TrainConfig, masks: dict | None = None) -> AdamState:
    """In-place Adam step with bias correction.

    ``masks[name]`` (True = trainable) pins every other entry: its value is
    never written.
    """
    state.step += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
        if masks is not None and name in masks:
            p[masks[name]] -= update[masks[name]]
        else:
            p -= update
    return state


def _clip(grad_psi, grad_eig, limit):
    if limit is None:
        return grad_psi, grad_eig
    norm = math.sqrt(float(np.sum(grad_psi * grad_psi) + np.sum(grad_eig * grad_eig)))
    if norm > limit:
        s = limit / norm
        return grad_psi * s, grad_eig * s
    return grad_psi, grad_eig


def _progress(stream, rec: EpochRecord):
    if stream is not None:
        print(
            f"epoch {rec.epoch:4d}  loss {rec.loss:.6f}  train {rec.train_accuracy:.4f}  "
            f"test {rec.test_accuracy:.4f}  [{rec.wall_time:.1f}s]",
            file=stream,
            flush=True,
        )


def train(
    train_set: LabeledDataset,
    test_set: LabeledDataset | None,
    sc: SpectralCoupling,
    attractors,
    cfg: TrainConfig,
    *,
    progress=sys.stderr,
    metadata: dict | None = None,
) -> tuple[Checkpoint, TrainLog]:
    """Mini-batch Adam on the free spectral parameters.

    Returns the checkpoint with the best test accuracy (the last one when no
    test set is given) and the per-epoch log. Two consecutive non-finite
    batches abort with :class:`DivergenceAbort`.
    """
    if train_set.n != sc.n:
        raise DimensionError(f"dataset has {train_set.n} pixels, model has {sc.n} neurons")
    sc = sc.copy()
    icfg = cfg.integration
    targets_all = attractors.states[train_set.labels]
    masks = {"psi": np.broadcast_to(sc.free_cols, sc.psi.shape).copy(), "eigvals": sc.free_cols.copy()}
    params = {"psi": sc.psi, "eigvals": sc.eigvals}
    state = AdamState()
    log = TrainLog()
    lambdas = attractors.lambdas
    class_lambdas = None if np.all(lambdas == sc.lambda_planted) else lambdas.copy()

    def snapshot() -> Checkpoint:
        return Checkpoint(
            coupling=sc.copy(),
            patterns=attractors.patterns.copy(),
            integration=icfg,
            class_lambdas=class_lambdas,
            train_seed=cfg.seed,
            metadata=dict(metadata or {}),
        )

    best, best_acc = snapshot(), -1.0
    bad_streak = 0
    last_finite = None
    t0 = time.perf_counter()
    m = len(train_set)
    for epoch in range(1, cfg.epochs + 1):
        order = generator(derive_seed(cfg.seed, _SHUFFLE, epoch)).permutation(m)
        losses, correct, seen = [], 0, 0
        for start in range(0, m, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            noise = None
            if icfg.sigma > 0.0:
                seeds = [derive_seed(cfg.seed, _NOISE, epoch, int(i)) for i in idx]
                noise = draw_noise(seeds, icfg.steps, sc.n)
            try:
                res = backprop_through_time(
                    train_set.items[idx], sc, icfg, targets_all[idx],
                    attractor_states=attractors.states, noise=noise, detach_damping=cfg.detach_damping,
                )
                if not math.isfinite(res.loss):
                    raise NonFiniteState("non-finite loss")
            except (NonFiniteState, SingularPsi) as exc:
                bad_streak += 1
                if bad_streak >= 2:
                    raise DivergenceAbort(
                        f"training diverged in epoch {epoch}: {exc}", last_finite_loss=last_finite
                    ) from exc
                continue
            bad_streak = 0
            last_finite = res.loss
            losses.append(res.loss)
            pred = classify(res.final_states, attractors)
            correct += int(np.sum(pred == train_set.labels[idx]))
            seen += len(idx)
            g_psi, g_eig = _clip(res.grad_psi, res.grad_eigvals, cfg.grad_clip)
            adam_update(params, {"psi": g_psi, "eigvals": g_eig}, state, cfg, masks)

        test_acc = float("nan")
        if test_set is not None and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
            current = snapshot()
            try:
                test_acc = accuracy(current, test_set, seed=cfg.eval_seed)
            except SingularPsi:
                test_acc = 0.0
            if test_acc > best_acc:
                best, best_acc = current, test_acc
        rec = EpochRecord(
            epoch,
            float(np.mean(losses)) if losses else float("nan"),
            correct / seen if seen else float("nan"),
            test_acc,
            time.perf_counter() - t0,
        )
        log.records.append(rec)
        _progress(progress, rec)
    if test_set is None:
        best = snapshot()
    return best, log
