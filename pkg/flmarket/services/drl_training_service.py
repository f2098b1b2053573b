"""
Training of the DRLA scoring network by n-step double deep Q-learning.

Episodes build a worker set one owner at a time with epsilon-greedy actions over the
owners still feasible; the step reward is the social-welfare increase. Transitions
go to a FIFO replay memory and minibatches are regressed onto double-Q targets.
"""
from collections import Counter, deque
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Set, TypedDict, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from flmarket.core.constants import TRAINING_LOG_COLUMNS
from flmarket.core.exceptions import InvalidInputError, TrainingDivergenceError
from flmarket.core.logging_config import logger
from flmarket.nn import autodiff as ad
from flmarket.nn.optim import AdamState, adam_step, clip_gradients
from flmarket.schemas.market import DataOwnerType, MarketConfig
from flmarket.schemas.training import DrlaHyperParams, Experience, TrainConfig
from flmarket.services import market_model as mm
from flmarket.services.drla_service import DrlaParams, InstanceFeatures, allocate, score_tensor
from flmarket.utils.csv_io import write_table

Instance = Sequence[DataOwnerType]
InstanceSource = Union[Sequence[Instance], Callable[[np.random.Generator], Instance]]


class EpisodeTrace(TypedDict):
    actions: List[int]
    rewards: List[float]
    experiences: List[Experience]
    welfare: float
    stopped_on_loss: bool


class TrainingResult(TypedDict):
    params: DrlaParams
    log: pd.DataFrame
    updates: int


class ReplayMemory:
    """Fixed-capacity FIFO store of experiences with seeded uniform sampling.

    Counts how many stored experiences point at each training instance, so callers
    can release instance features once nothing references them.
    """

    def __init__(self, capacity: int, seed: int = 0):
        self._items = deque(maxlen=capacity)
        self._rng = np.random.default_rng(seed)
        self._refs: Counter = Counter()

    def push(self, experience: Experience):
        if len(self._items) == self._items.maxlen:
            evicted = self._items[0].instance
            self._refs[evicted] -= 1
            if self._refs[evicted] <= 0:
                del self._refs[evicted]
        self._items.append(experience)
        self._refs[experience.instance] += 1

    def extend(self, experiences: Sequence[Experience]):
        for experience in experiences:
            self.push(experience)

    def sample(self, batch_size: int) -> List[Experience]:
        if batch_size > len(self._items):
            raise InvalidInputError(f"cannot sample {batch_size} experiences from {len(self._items)}")
        index = self._rng.choice(len(self._items), size=batch_size, replace=False)
        return [self._items[k] for k in index]

    def instance_ids(self) -> Set[int]:
        return set(self._refs)

    def __len__(self) -> int:
        return len(self._items)


def prune_features(store: Dict[int, InstanceFeatures], memory: ReplayMemory) -> int:
    """Drop features of instances no stored experience refers to; returns how many were dropped."""
    stale = store.keys() - memory.instance_ids()
    for instance_id in stale:
        del store[instance_id]
    return len(stale)


def step_reward(current: Sequence[int], action: int, owners: Instance, cfg: MarketConfig) -> float:
    """Social-welfare increase from adding `action` to the current worker set, with true costs."""
    if action in current:
        raise InvalidInputError(f"owner {action} is already selected")
    before = mm.social_welfare(current, owners, cfg)
    return mm.social_welfare(list(current) + [action], owners, cfg) - before


def feasible_actions(selected: Sequence[int], features: InstanceFeatures) -> List[int]:
    taken = set(selected)
    blocked = features.graph.conflict_set(taken)
    return [k for k in range(features.n) if k not in taken and k not in blocked]


def _best_action(actions: Sequence[int], scores: np.ndarray) -> int:
    return min(actions, key=lambda k: (-scores[k], k))


def episode_rollout(features: InstanceFeatures, scores: np.ndarray, epsilon: float,
                    rng: np.random.Generator, cfg: MarketConfig, train_cfg: TrainConfig,
                    instance_id: int = 0) -> EpisodeTrace:
    """
    One epsilon-greedy episode on a fixed instance.

    Args:
        features: the instance
        scores: per-owner scores of the current network
        epsilon: probability of a uniformly random feasible action
        rng: exploration randomness
        cfg: market config for the true rewards
        train_cfg: n-step horizon and step limit
        instance_id: index recorded on the emitted experiences

    Returns:
        EpisodeTrace: actions, rewards, n-step experiences and final welfare
    """
    owners = features.owners
    max_steps = train_cfg.max_steps or features.n
    actions: List[int] = []
    rewards: List[float] = []
    stopped_on_loss = False

    while len(actions) < max_steps:
        pool = feasible_actions(actions, features)
        if not pool:
            break
        if rng.random() < epsilon:
            action = int(pool[rng.integers(len(pool))])
        else:
            action = _best_action(pool, scores)
        reward = step_reward(actions, action, owners, cfg)
        actions.append(action)
        rewards.append(reward)
        if reward < 0.0:
            stopped_on_loss = True
            break

    experiences = _n_step_experiences(actions, rewards, features, train_cfg.n_step, instance_id,
                                      finished=stopped_on_loss or len(actions) < max_steps)
    return {
        "actions": actions,
        "rewards": rewards,
        "experiences": experiences,
        "welfare": mm.social_welfare(actions, owners, cfg),
        "stopped_on_loss": stopped_on_loss,
    }


def _n_step_experiences(actions: List[int], rewards: List[float], features: InstanceFeatures,
                        n_step: int, instance_id: int, finished: bool) -> List[Experience]:
    """Transitions from step t to step t + n_step; windows cut by the episode end are terminal."""
    experiences: List[Experience] = []
    steps = len(actions)
    for t in range(steps):
        end = t + n_step
        if end > steps and not finished:
            # truncated by the step limit: a shorter window has no consistent bootstrap
            continue
        window = tuple(rewards[t:end])
        next_state = frozenset(actions[:min(end, steps)])
        next_actions = () if end >= steps and finished else tuple(feasible_actions(sorted(next_state), features))
        experiences.append(Experience(
            instance=instance_id,
            state=frozenset(actions[:t]),
            action=actions[t],
            rewards=window,
            reward=float(sum(window)),
            next_state=next_state,
            next_actions=next_actions,
            terminal=len(next_actions) == 0,
        ))
    return experiences


def double_q_value(reward: float, actions: Sequence[int], eval_scores: np.ndarray, target_scores: np.ndarray,
                   discount: float, n_step: int) -> float:
    """R + discount^n * Q_target(argmax over `actions` of Q_eval); just R when no action is left."""
    if not actions:
        return float(reward)
    chosen = _best_action(actions, eval_scores)
    return float(reward + discount ** n_step * target_scores[chosen])


def ddqn_target(experience: Experience, params: DrlaParams, target_params: DrlaParams,
                train_cfg: TrainConfig, features: InstanceFeatures) -> float:
    if experience.terminal:
        return experience.reward
    eval_scores = _instance_scores(features, params)
    target_scores = _instance_scores(features, target_params)
    return double_q_value(experience.reward, experience.next_actions, eval_scores, target_scores,
                          train_cfg.discount, train_cfg.n_step)


def _instance_scores(features: InstanceFeatures, params: DrlaParams) -> np.ndarray:
    return score_tensor([features], params.tensors(), params.hyper).value[:, 0]


def _batch_scores(features: Sequence[InstanceFeatures], params: DrlaParams) -> List[np.ndarray]:
    stacked = score_tensor(features, params.tensors(), params.hyper).value[:, 0]
    bounds = np.cumsum([0] + [f.n for f in features])
    return [stacked[s:e] for s, e in zip(bounds[:-1], bounds[1:])]


def gradient_step(batch: Sequence[Experience], store: Mapping[int, InstanceFeatures], params: DrlaParams,
                  target_params: DrlaParams, train_cfg: TrainConfig, adam: AdamState) -> float:
    """One ADAM step on the mean squared error between double-Q targets and current scores."""
    # candidate rows carry a zero selection bit, so scores are the same in every state
    instance_ids = sorted({e.instance for e in batch})
    position = {inst: k for k, inst in enumerate(instance_ids)}
    features = [store[inst] for inst in instance_ids]
    eval_scores = _batch_scores(features, params)
    target_scores = _batch_scores(features, target_params)

    targets = np.array([
        e.reward if e.terminal else double_q_value(
            e.reward, e.next_actions, eval_scores[position[e.instance]],
            target_scores[position[e.instance]], train_cfg.discount, train_cfg.n_step)
        for e in batch
    ]).reshape(-1, 1)

    offsets = np.cumsum([0] + [f.n for f in features])
    rows = [int(offsets[position[e.instance]]) + e.action for e in batch]
    tensors = params.tensors(trainable=True)
    predicted = ad.gather_rows(score_tensor(features, tensors, params.hyper), rows)
    loss = ad.mean(ad.square(predicted - ad.constant(targets)))
    ad.backward(loss)

    grads = {name: t.grad for name, t in tensors.items() if t.grad is not None}
    if train_cfg.grad_clip > 0:
        grads = clip_gradients(grads, train_cfg.grad_clip)
    params.arrays = adam_step(params.arrays, grads, adam)
    return loss.item()


def _draw_instance(source: InstanceSource, rng: np.random.Generator) -> Instance:
    if callable(source):
        return source(rng)
    if len(source) == 0:
        raise InvalidInputError("training needs at least one instance")
    return source[int(rng.integers(len(source)))]


def validation_welfare(instances: Sequence[Instance], params: DrlaParams, cfg: MarketConfig) -> float:
    if not instances:
        return float("nan")
    values = [mm.social_welfare(allocate(owners, params), owners, cfg) for owners in instances]
    return float(np.mean(values))


def train(source: InstanceSource, cfg: MarketConfig, train_cfg: TrainConfig,
          hyper: Optional[DrlaHyperParams] = None, validation: Optional[Sequence[Instance]] = None,
          log_path: Optional[Union[str, Path]] = None, checkpoint_path: Optional[Union[str, Path]] = None,
          initial: Optional[DrlaParams] = None, show_progress: bool = False) -> TrainingResult:
    """
    Train the scoring network; deterministic given `train_cfg.seed`.

    Args:
        source: list of training instances, or a callable drawing one from a generator
        cfg: market config for rewards and validation welfare
        train_cfg: schedule and optimizer settings
        hyper: network shape for a fresh initialization
        validation: held-out instances scored every `validate_every` episodes
        log_path: CSV destination for the training log
        checkpoint_path: parameter file written at each validation and at the end
        initial: parameters to continue from instead of a fresh initialization
        show_progress: tqdm progress bar over episodes

    Returns:
        TrainingResult: trained parameters, the per-episode log and the number of updates
    """
    rng = np.random.default_rng(train_cfg.seed)
    params = initial.copy() if initial is not None else DrlaParams.initialize(hyper or DrlaHyperParams(), train_cfg.seed)
    target_params = params.copy()
    memory = ReplayMemory(train_cfg.replay_capacity, seed=train_cfg.seed + 1)
    adam = AdamState(lr=train_cfg.lr)
    # keyed by episode number, the instance id carried on each experience
    store: Dict[int, InstanceFeatures] = {}
    validation = list(validation or [])

    rows: List[Dict[str, float]] = []
    last_validation = float("nan")
    updates = 0

    for episode in tqdm(range(train_cfg.episodes), desc="train-drla", disable=not show_progress):
        epsilon = train_cfg.epsilon(episode)
        features = InstanceFeatures(_draw_instance(source, rng), params.hyper)
        store[episode] = features
        trace = episode_rollout(features, _instance_scores(features, params), epsilon, rng, cfg,
                                train_cfg, instance_id=episode)
        memory.extend(trace["experiences"])
        prune_features(store, memory)

        losses: List[float] = []
        for _ in range(len(trace["actions"]) * train_cfg.updates_per_step):
            if len(memory) < train_cfg.batch_size:
                break
            loss = gradient_step(memory.sample(train_cfg.batch_size), store, params, target_params, train_cfg, adam)
            if not np.isfinite(loss):
                raise TrainingDivergenceError(episode, loss)
            losses.append(loss)
            updates += 1

        if (episode + 1) % train_cfg.target_reset == 0:
            target_params = params.copy()

        if validation and ((episode + 1) % train_cfg.validate_every == 0 or episode + 1 == train_cfg.episodes):
            last_validation = validation_welfare(validation, params, cfg)
            logger.info(f"Episode {episode + 1}/{train_cfg.episodes}: validation welfare {last_validation:.4f}, "
                        f"epsilon {epsilon:.3f}, updates {updates}")
            if checkpoint_path is not None:
                params.save(checkpoint_path)

        rows.append({
            "episode": episode + 1,
            "validation_welfare": last_validation,
            "loss": float(np.mean(losses)) if losses else float("nan"),
            "epsilon": epsilon,
        })
        logger.debug(f"Episode {episode + 1}: actions={trace['actions']} welfare={trace['welfare']:.4f}")

    log = pd.DataFrame(rows, columns=TRAINING_LOG_COLUMNS)
    if log_path is not None:
        write_table(log, log_path)
    if checkpoint_path is not None:
        params.save(checkpoint_path)
    return {"params": params, "log": log, "updates": updates}
