"""
Desk-scale federated averaging on a synthetic label-clustered task, used to produce
(D, Delta, accuracy) grids and to re-fit the data-quality curve constants.
"""
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from flmarket.core.config import get_settings
from flmarket.core.constants import GRID_COLUMNS
from flmarket.core.exceptions import FitFailureError, InvalidInputError
from flmarket.core.logging_config import logger
from flmarket.schemas.fedsim import FedConfig, FitResult, GridSpec, TaskConfig
from flmarket.services import market_model as mm
from flmarket.utils.curve_fit import describe, gauss_newton, r_squared

Model = Dict[str, np.ndarray]

KAPPA_NAMES = ["kappa1", "kappa2", "kappa3", "kappa4", "kappa5", "kappa6"]


class SyntheticTask(NamedTuple):
    means: np.ndarray
    spread: float
    pools: List[np.ndarray]
    test_features: np.ndarray
    test_labels: np.ndarray

    @property
    def label_count(self) -> int:
        return self.means.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.means.shape[1]


class LocalDataset(NamedTuple):
    features: np.ndarray
    labels: np.ndarray
    emd: float

    @property
    def size(self) -> int:
        return int(self.labels.shape[0])


def make_task(cfg: TaskConfig) -> SyntheticTask:
    rng = np.random.default_rng(cfg.seed)
    angles = 2.0 * np.pi * np.arange(cfg.label_count) / cfg.label_count
    means = cfg.radius * np.column_stack([np.cos(angles), np.sin(angles)])
    pools = [means[j] + cfg.spread * rng.standard_normal((cfg.pool_per_label, 2)) for j in range(cfg.label_count)]
    test_features = np.vstack([
        means[j] + cfg.spread * rng.standard_normal((cfg.test_per_label, 2)) for j in range(cfg.label_count)
    ])
    test_labels = np.repeat(np.arange(cfg.label_count), cfg.test_per_label)
    return SyntheticTask(means, cfg.spread, pools, test_features, test_labels)


def partition_noniid(task: SyntheticTask, worker_count: int, labels_per_worker: int, sizes: Sequence[int],
                     rng: np.random.Generator) -> List[LocalDataset]:
    """
    Label-skewed local datasets: worker w draws only from labels w*k .. w*k+k-1 (mod L).

    Args:
        task: sample pools
        worker_count: number of workers
        labels_per_worker: k, labels held by each worker, split as evenly as possible
        sizes: local data size per worker
        rng: draws samples from the pools

    Returns:
        List[LocalDataset]: features, labels and EMD against the uniform label distribution
    """
    labels = task.label_count
    if len(sizes) != worker_count:
        raise InvalidInputError(f"{len(sizes)} sizes given for {worker_count} workers")
    if not 1 <= labels_per_worker <= labels:
        raise InvalidInputError(f"labels per worker must lie in [1, {labels}], got {labels_per_worker}")
    reference = mm.uniform_distribution(labels)

    datasets: List[LocalDataset] = []
    for worker, size in enumerate(sizes):
        held = [(worker * labels_per_worker + j) % labels for j in range(labels_per_worker)]
        counts = np.zeros(labels, dtype=int)
        base, extra = divmod(int(size), labels_per_worker)
        for position, label in enumerate(held):
            counts[label] = base + (1 if position < extra else 0)

        features, targets = [], []
        for label in held:
            if counts[label] == 0:
                continue
            pool = task.pools[label]
            if counts[label] > pool.shape[0]:
                raise InvalidInputError(f"label {label} needs {counts[label]} samples, pool has {pool.shape[0]}")
            chosen = rng.choice(pool.shape[0], size=counts[label], replace=False)
            features.append(pool[chosen])
            targets.append(np.full(counts[label], label))

        if size > 0:
            emd_value = mm.emd(mm.label_distribution_from_counts(counts.tolist()), reference)
            datasets.append(LocalDataset(np.vstack(features), np.concatenate(targets), emd_value))
        else:
            datasets.append(LocalDataset(np.zeros((0, task.feature_dim)), np.zeros(0, dtype=int), 0.0))
    return datasets


def init_model(task: SyntheticTask) -> Model:
    return {"W": np.zeros((task.feature_dim, task.label_count)), "b": np.zeros(task.label_count)}


def _logits(model: Model, features: np.ndarray) -> np.ndarray:
    return features @ model["W"] + model["b"]


def _one_hot(labels: np.ndarray, label_count: int) -> np.ndarray:
    encoded = np.zeros((labels.shape[0], label_count))
    encoded[np.arange(labels.shape[0]), labels] = 1.0
    return encoded


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    weights = np.exp(shifted)
    return weights / weights.sum(axis=1, keepdims=True)


def cross_entropy_loss(model: Model, features: np.ndarray, labels: np.ndarray) -> float:
    probs = _softmax(_logits(model, features))
    return float(-np.mean(np.log(probs[np.arange(labels.shape[0]), labels] + 1e-300)))


def cross_entropy_gradient(model: Model, features: np.ndarray, labels: np.ndarray) -> Model:
    error = _softmax(_logits(model, features)) - _one_hot(labels, model["b"].shape[0])
    return {"W": features.T @ error / labels.shape[0], "b": error.mean(axis=0)}


def mse_loss(model: Model, features: np.ndarray, labels: np.ndarray) -> float:
    """Half squared error between the linear outputs and one-hot targets, averaged over samples."""
    error = _logits(model, features) - _one_hot(labels, model["b"].shape[0])
    return float(0.5 * np.mean(np.sum(error ** 2, axis=1)))


def mse_gradient(model: Model, features: np.ndarray, labels: np.ndarray) -> Model:
    error = _logits(model, features) - _one_hot(labels, model["b"].shape[0])
    return {"W": features.T @ error / labels.shape[0], "b": error.mean(axis=0)}


_GRADIENTS = {"cross_entropy": cross_entropy_gradient, "mse": mse_gradient}


def accuracy(model: Model, features: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(_logits(model, features), axis=1) == labels))


def local_train(model: Model, dataset: LocalDataset, cfg: FedConfig, rng: np.random.Generator) -> Model:
    """delta_l epochs of shuffled minibatch SGD; returns a new model."""
    trained = {name: value.copy() for name, value in model.items()}
    if dataset.size == 0:
        return trained
    gradient = _GRADIENTS[cfg.loss]
    for _ in range(cfg.local_epochs):
        order = rng.permutation(dataset.size)
        for start in range(0, dataset.size, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            grads = gradient(trained, dataset.features[batch], dataset.labels[batch])
            for name in trained:
                trained[name] -= cfg.lr * grads[name]
    return trained


def fedavg_round(models: Sequence[Model], sizes: Sequence[float]) -> Model:
    """Data-size weighted average of the workers' parameters."""
    if len(models) == 0 or len(models) != len(sizes):
        raise InvalidInputError(f"need one size per model, got {len(models)} models and {len(sizes)} sizes")
    total = float(sum(sizes))
    if total <= 0:
        raise InvalidInputError("aggregation weights must have a positive sum")
    weights = [s / total for s in sizes]
    return {name: sum(w * m[name] for w, m in zip(weights, models)) for name in models[0]}


def run_fedavg(task: SyntheticTask, partitions: Sequence[LocalDataset], cfg: FedConfig,
               seed: Optional[int] = None) -> float:
    """Test accuracy of the global model after delta_g FedAvg rounds."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    sampled = cfg.sampled_workers or len(partitions)
    if sampled > len(partitions):
        raise InvalidInputError(f"cannot sample {sampled} of {len(partitions)} workers")
    model = init_model(task)
    for _ in range(cfg.global_epochs):
        chosen = sorted(rng.choice(len(partitions), size=sampled, replace=False).tolist())
        sizes = [partitions[k].size for k in chosen]
        if sum(sizes) == 0:
            continue
        local_models = [local_train(model, partitions[k], cfg, rng) for k in chosen]
        model = fedavg_round(local_models, sizes)
    return accuracy(model, task.test_features, task.test_labels)


def centralized_train(task: SyntheticTask, dataset: LocalDataset, cfg: FedConfig,
                      seed: Optional[int] = None) -> float:
    """Plain SGD on pooled data for delta_l * delta_g epochs."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    pooled = cfg.model_copy(update={"local_epochs": cfg.local_epochs * cfg.global_epochs})
    model = local_train(init_model(task), dataset, pooled, rng)
    return accuracy(model, task.test_features, task.test_labels)


def _grid_cell(task: SyntheticTask, data_size: int, labels_per_worker: int, grid: GridSpec,
               cfg: FedConfig, cell: int) -> Dict[str, float]:
    base, extra = divmod(data_size, grid.workers)
    sizes = [base + (1 if w < extra else 0) for w in range(grid.workers)]
    accuracies, deltas = [], []
    for repetition in range(grid.seeds):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, cell, repetition]))
        partitions = partition_noniid(task, grid.workers, labels_per_worker, sizes, rng)
        run_seed = int(rng.integers(2 ** 31))
        accuracies.append(run_fedavg(task, partitions, cfg, seed=run_seed))
        deltas.append(float(np.mean([p.emd for p in partitions if p.size > 0] or [0.0])))
    return {
        "D": float(data_size),
        "Delta": float(np.mean(deltas)),
        "accuracy": float(np.mean(accuracies)),
        "std": float(np.std(accuracies)),
        "seeds": grid.seeds,
    }


def run_grid(task: SyntheticTask, grid: GridSpec, cfg: FedConfig, n_jobs: Optional[int] = None) -> pd.DataFrame:
    cells = [(d, k) for d in grid.data_sizes for k in grid.labels_per_worker]
    n_jobs = n_jobs or get_settings().N_JOBS
    logger.info(f"FedAvg grid: {len(cells)} cells x {grid.seeds} seeds on {n_jobs} worker(s)")
    rows = Parallel(n_jobs=n_jobs)(
        delayed(_grid_cell)(task, d, k, grid, cfg, cell) for cell, (d, k) in enumerate(cells)
    )
    return pd.DataFrame(rows, columns=GRID_COLUMNS)


def quality_curve(data: np.ndarray, delta: np.ndarray, kappas: Sequence[float]) -> np.ndarray:
    """alpha(Delta) - kappa1 * exp(-kappa2 * (kappa3 * D)^alpha(Delta)), vectorized."""
    k1, k2, k3, k4, k5, k6 = kappas
    alpha = k4 * np.exp(-((delta + k5) / k6) ** 2)
    return alpha - k1 * np.exp(-k2 * np.power(k3 * data, alpha))


def _initial_guess(rng: np.random.Generator, restart: int, observed: np.ndarray, data: np.ndarray) -> np.ndarray:
    coarse = [(k4, k5, k6) for k4 in (0.8, 0.9, 1.0) for k5 in (0.1, 0.3, 0.6) for k6 in (1.0, 1.7, 2.5)]
    if restart == 0:
        k4, k5, k6 = 0.9, 0.3, 1.7
        jitter = np.ones(6)
    else:
        k4, k5, k6 = coarse[int(rng.integers(len(coarse)))]
        jitter = np.exp(rng.normal(0.0, 0.2, 6))
    k1 = max(0.05, float(observed.max() - observed.min()))
    k3 = 1.0 / max(float(np.median(data[data > 0])) if np.any(data > 0) else 1.0, 1e-12)
    return np.array([k1, 4.0, k3, k4, k5, k6]) * jitter


def fit_quality_params(grid: pd.DataFrame, fixed: Optional[Mapping[str, float]] = None,
                       restarts: int = 20, seed: int = 0) -> FitResult:
    """
    Least-squares fit of the data-quality curve to a (D, Delta, accuracy) grid.

    Parameters are fitted in log space so they stay positive. Restarts start from a
    coarse grid over kappa4..kappa6 with random jitter; a restart whose Jacobian loses
    rank is abandoned.

    Args:
        grid: DataFrame with columns D, Delta, accuracy
        fixed: kappa name -> value held constant during the fit
        restarts: number of Gauss-Newton starts
        seed: seeds the restart jitter

    Returns:
        FitResult: best parameters, residual sum of squares and R^2
    """
    fixed = dict(fixed or {})
    unknown = sorted(set(fixed) - set(KAPPA_NAMES))
    if unknown:
        raise InvalidInputError(f"unknown fixed parameters {unknown}")
    data = grid["D"].to_numpy(dtype=float)
    delta = grid["Delta"].to_numpy(dtype=float)
    observed = grid["accuracy"].to_numpy(dtype=float)
    if observed.size < len(KAPPA_NAMES) - len(fixed):
        raise FitFailureError("grid has fewer points than free parameters", {"points": int(observed.size)})
    if np.allclose(observed, observed[0]):
        raise FitFailureError("accuracy is constant over the grid; the curve is not identifiable",
                              {"accuracy": float(observed[0])})

    free = [k for k, name in enumerate(KAPPA_NAMES) if name not in fixed]

    def expand(theta: np.ndarray) -> np.ndarray:
        kappas = np.array([fixed.get(name, 0.0) for name in KAPPA_NAMES], dtype=float)
        kappas[free] = np.exp(theta)
        return kappas

    def residuals(theta: np.ndarray) -> np.ndarray:
        with np.errstate(over="ignore", invalid="ignore"):
            return quality_curve(data, delta, expand(theta)) - observed

    rng = np.random.default_rng(seed)
    best = None
    attempts: List[Dict[str, float]] = []
    for restart in range(restarts):
        start = _initial_guess(rng, restart, observed, data)
        result = gauss_newton(residuals, np.log(start[free]))
        attempts.append(describe(result))
        if result.rank_deficient:
            logger.warning(f"Quality fit restart {restart}: rank-deficient Jacobian, restarting")
            continue
        if not np.isfinite(result.sse):
            continue
        if best is None or result.sse < best.sse:
            best = result

    if best is None:
        raise FitFailureError(f"all {restarts} restarts of the quality fit failed", {"attempts": attempts})

    kappas = expand(best.x)
    alphas = kappas[3] * np.exp(-((delta + kappas[4]) / kappas[5]) ** 2)
    fit = FitResult(
        params={name: float(v) for name, v in zip(KAPPA_NAMES, kappas)},
        fixed=sorted(fixed),
        sse=float(best.sse),
        r_squared=r_squared(observed, best.sse),
        restarts=restarts,
        successful_restarts=sum(1 for a in attempts if not a["rank_deficient"] and np.isfinite(a["sse"])),
        alpha_range=(float(alphas.min()), float(alphas.max())),
    )
    logger.info(f"Quality fit: R^2={fit.r_squared:.4f}, sse={fit.sse:.6g}, params={fit.params}")
    return fit
