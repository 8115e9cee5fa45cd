"""Classification by final state, accuracy, robustness sweeps and ensembles."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .datasets import LabeledDataset, attack_dataset
from .dynamics import IntegrationConfig, draw_noise, hill, integrate, integrate_stochastic
from .errors import NonFiniteState
from .rng import derive_seed
from .spectral import assemble

logger = logging.getLogger(__name__)

REJECTED = -1
#: Items integrated together during evaluation.
EVAL_CHUNK = 500


def classify(final_state, attractors, criterion: str = "inner_product", tau=None, space: str = "image"):
    """Class index (or ``REJECTED``) for one final state or a batch of them.

    ``inner_product``: argmax_k <f(x), psi_k> in image space, or <x, psi_k>
    with ``space="state"``. Ties go to the lowest index.
    ``l2``: the nearest planted state if its distance is below ``tau``
    (scalar, or one threshold per class), else ``REJECTED``.
    """
    x = np.asarray(final_state, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if criterion == "inner_product":
        if space == "image":
            v = hill(x, attractors.alphabet.c)
        elif space == "state":
            v = x
        else:
            raise ValueError(f"unknown space {space!r}")
        pred = np.argmax(v @ attractors.images.T, axis=1)
    elif criterion == "l2":
        if tau is None:
            raise ValueError("the l2 criterion needs a threshold tau")
        dist = np.linalg.norm(x[:, None, :] - attractors.states[None], axis=2)
        nearest = np.argmin(dist, axis=1)
        thresh = np.broadcast_to(np.asarray(tau, dtype=np.float64), (attractors.k,))
        ok = dist[np.arange(len(x)), nearest] < thresh[nearest]
        pred = np.where(ok, nearest, REJECTED)
    else:
        raise ValueError(f"unknown criterion {criterion!r}")
    return int(pred[0]) if single else pred


def default_tau(attractors) -> np.ndarray:
    """Per-class l2 threshold 0.5 * |X_k|."""
    return 0.5 * np.linalg.norm(attractors.states, axis=1)


def majority(votes: np.ndarray) -> int:
    """Most frequent non-rejected class, lowest index on ties."""
    valid = votes[votes >= 0]
    if valid.size == 0:
        return REJECTED
    return int(np.argmax(np.bincount(valid)))


def _final_states(x0, A, attractors, cfg, c, beta, noise_seeds):
    if cfg.sigma == 0.0:
        return integrate(x0, A, cfg, c=c, beta=beta, record=False)
    noise = draw_noise(noise_seeds, cfg.steps, x0.shape[1])
    return integrate_stochastic(x0, A, attractors.states, cfg, c=c, beta=beta, noise=noise, record=False)


@dataclass
class EvalResult:
    predictions: np.ndarray
    labels: np.ndarray
    votes: np.ndarray  # (realizations, M)
    residuals: np.ndarray  # |x(T) - X_pred| of the first realization, nan when rejected/failed
    n_failed: int = 0

    @property
    def accuracy(self) -> float:
        if len(self.labels) == 0:
            return 0.0
        return float(np.mean(self.predictions == self.labels))


def evaluate(
    checkpoint,
    dataset: LabeledDataset,
    cfg: IntegrationConfig | None = None,
    realizations_per_item: int = 1,
    seed: int = 0,
    criterion: str = "inner_product",
    tau=None,
    space: str = "image",
    A: np.ndarray | None = None,
) -> EvalResult:
    """Integrate every item and classify its final state.

    Realization ``r`` of item ``i`` draws its noise from ``derive_seed(seed, i, r)``.
    Deterministic models are integrated once regardless of ``realizations_per_item``.
    Items whose integration diverges count as misclassified.
    """
    if realizations_per_item < 1:
        raise ValueError("realizations_per_item must be >= 1")
    sc = checkpoint.coupling
    attractors = checkpoint.attractors
    cfg = checkpoint.integration if cfg is None else cfg
    A = assemble(sc) if A is None else A
    if criterion == "l2" and tau is None:
        tau = default_tau(attractors)
    m = len(dataset)
    reps = 1 if cfg.sigma == 0.0 else realizations_per_item
    votes = np.full((reps, m), REJECTED, dtype=np.int64)
    residuals = np.full(m, np.nan)
    failed = 0
    for r in range(reps):
        for start in range(0, m, EVAL_CHUNK):
            idx = np.arange(start, min(m, start + EVAL_CHUNK))
            x0 = dataset.items[idx]
            seeds = [derive_seed(seed, int(i), r) for i in idx]
            try:
                final = _final_states(x0, A, attractors, cfg, sc.c, sc.beta, seeds)
                ok = np.ones(len(idx), dtype=bool)
            except NonFiniteState:
                # redo item by item to isolate the diverging ones
                final = np.zeros_like(x0)
                ok = np.zeros(len(idx), dtype=bool)
                for j in range(len(idx)):
                    try:
                        final[j] = _final_states(x0[j : j + 1], A, attractors, cfg, sc.c, sc.beta, seeds[j : j + 1])[0]
                        ok[j] = True
                    except NonFiniteState as exc:
                        failed += 1
                        logger.warning("item %d diverged at step %s", idx[j], exc.step)
            pred = classify(final, attractors, criterion, tau=tau, space=space)
            pred = np.where(ok, pred, REJECTED)
            votes[r, idx] = pred
            if r == 0:
                hit = pred >= 0
                safe = np.where(hit, pred, 0)
                res = np.linalg.norm(final - attractors.states[safe], axis=1)
                residuals[idx] = np.where(hit, res, np.nan)
    predictions = votes[0].copy() if reps == 1 else np.array([majority(votes[:, i]) for i in range(m)])
    result = EvalResult(predictions, dataset.labels.copy(), votes, residuals, failed)
    if logger.isEnabledFor(logging.DEBUG):
        for i in np.flatnonzero(predictions != dataset.labels):
            logger.debug(
                "item %d: label %d predicted %d, residual %.3e", i, dataset.labels[i], predictions[i], residuals[i]
            )
    return result


def accuracy(checkpoint, dataset, cfg=None, realizations_per_item: int = 1, seed: int = 0, **kwargs) -> float:
    return evaluate(checkpoint, dataset, cfg, realizations_per_item, seed, **kwargs).accuracy


@dataclass
class RobustnessRow:
    kind: str
    p: float
    sigma: float
    accuracy: float
    n_items: int
    n_realizations: int
    model: int = 0
    per_seed: tuple[float, ...] = ()


@dataclass
class RobustnessTable:
    rows: list[RobustnessRow] = field(default_factory=list)

    def select(self, model: int | None = None, kind: str | None = None, p: float | None = None):
        return [
            r
            for r in self.rows
            if (model is None or r.model == model)
            and (kind is None or r.kind == kind)
            and (p is None or r.p == p)
        ]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kind", "p", "sigma", "accuracy", "acc_min", "acc_max", "n_items", "n_realizations", "model"])
            for r in self.rows:
                w.writerow(
                    [r.kind, repr(r.p), repr(r.sigma), repr(r.accuracy), repr(min(r.per_seed)),
                     repr(max(r.per_seed)), r.n_items, r.n_realizations, r.model]
                )


def robustness_sweep(
    checkpoints,
    dataset: LabeledDataset,
    kind: str,
    p_grid,
    seeds=(0,),
    realizations_per_item: int = 1,
    clip: bool = False,
) -> RobustnessTable:
    """Accuracy under attack for every checkpoint and intensity.

    For each evaluation seed ``s`` the test set is attacked with
    ``derive_seed(s, 0)`` and model noise uses ``derive_seed(s, 1)``; the row
    reports the mean over seeds and keeps the per-seed values.
    """
    p_grid = [float(p) for p in p_grid]
    if not p_grid:
        raise ValueError("p_grid must not be empty")
    if any(b < a for a, b in zip(p_grid, p_grid[1:])):
        raise ValueError("p_grid must be ascending")
    kind = kind.upper()
    seeds = list(seeds)
    rows = []
    for p in p_grid:
        attacked = [attack_dataset(dataset, kind, p, derive_seed(s, 0), clip=clip) for s in seeds]
        for mi, ckpt in enumerate(checkpoints):
            A = assemble(ckpt.coupling)
            accs = tuple(
                accuracy(ckpt, data, realizations_per_item=realizations_per_item, seed=derive_seed(s, 1), A=A)
                for s, data in zip(seeds, attacked)
            )
            rows.append(
                RobustnessRow(kind, p, ckpt.sigma, float(np.mean(accs)), len(dataset), realizations_per_item, mi, accs)
            )
    return RobustnessTable(rows)


@dataclass
class Ensemble:
    times: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "mean", "std"])
            for row in zip(self.times, self.mean, self.std):
                w.writerow([repr(float(v)) for v in row])


def trajectory_ensemble(
    checkpoint, item, node_index: int, n_realizations: int, cfg: IntegrationConfig | None = None, seed: int = 0
) -> Ensemble:
    """Mean and standard deviation over noise realizations of f(x_node(t)).

    Realization ``r`` uses the stream seeded with ``seed + r``.
    """
    if n_realizations < 2:
        raise ValueError("need at least two realizations")
    cfg = checkpoint.integration if cfg is None else cfg
    sc = checkpoint.coupling
    A = assemble(sc)
    x0 = np.repeat(np.asarray(item, dtype=np.float64)[None], n_realizations, axis=0)
    run_cfg = IntegrationConfig(cfg.dt, cfg.steps, cfg.sigma, seed)
    traj = integrate_stochastic(x0, A, checkpoint.attractors.states, run_cfg, c=sc.c, beta=sc.beta)
    act = hill(traj.states[:, :, node_index], sc.c)
    # spread measured from the first realization so identical runs give exactly 0
    spread = act - act[:, :1]
    return Ensemble(traj.times, act.mean(axis=1), spread.std(axis=1))
