"""SGD-with-momentum training and the sequential-domain protocol.

One domain trains for a fixed number of epochs; the first domain (and every
stage of the joint baseline, which retrains from scratch on all data seen so
far) uses the decaying learning-rate schedule, later domains hold the final
rate. After each non-joint domain the importance pipeline runs on that
domain's training inputs and folds into the running map, the anchor
parameters are snapshotted, and (for the freezing strategy) the freeze mask
grows within its budget. Every R row is evaluated over all eval sets, seen
or not. Deterministic end to end given the schedule seed.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, NonFiniteError, SegclError, TrainingError
from .importance import accumulate, processed_importance
from .metrics import TrainTestMatrix, foreground_mean_dice
from .network import SegNet
from .regularization import StrategyState, build_freeze_mask, build_hooks
from .trainer_log import StepLogger


@dataclass
class TrainSchedule:
    epochs_per_domain: int = 12
    momentum: float = 0.95
    initial_lr: float = 0.1
    decay_factor: float = 0.5
    decay_every_epochs: int = 4
    batch_size: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.epochs_per_domain < 1:
            raise ConfigError("schedule.epochs_per_domain", "must be >= 1")
        if not (0.0 <= self.momentum < 1.0):
            raise ConfigError("schedule.momentum", f"must be in [0, 1), got {self.momentum}")
        if self.initial_lr <= 0:
            raise ConfigError("schedule.initial_lr", "must be positive")
        if self.decay_factor <= 0 or self.decay_every_epochs < 1:
            raise ConfigError("schedule.decay", "factor and interval must be positive")
        if self.batch_size < 1:
            raise ConfigError("schedule.batch_size", "must be >= 1")

    def base_lr(self, epoch, decaying):
        """Base LR for a 1-indexed epoch; non-decaying domains hold the value
        the first domain ended on."""
        if decaying:
            steps = (epoch - 1) // self.decay_every_epochs
        else:
            steps = (self.epochs_per_domain - 1) // self.decay_every_epochs
        return self.initial_lr * self.decay_factor**steps


@dataclass
class SequenceResult:
    matrix: TrainTestMatrix | None
    R: np.ndarray
    checkpoints: list = field(default_factory=list)
    logs: list = field(default_factory=list)
    importance_history: list = field(default_factory=list)
    final_net: SegNet | None = None


def _derived_seed(seed, *tags):
    return int(np.random.SeedSequence([int(seed), *tags]).generate_state(1)[0])


def _rng(seed, *tags):
    return np.random.default_rng(np.random.PCG64(np.random.SeedSequence([int(seed), *tags])))


def sgd_momentum_step(store, grads, lr, momentum, velocity, mask=None):
    """v <- momentum*v + g; theta <- theta - lr*v.

    `lr` is a float or a per-parameter dict of arrays. Masked entries keep
    their velocity at zero and their value untouched; zero-LR entries stay
    bit-identical.
    """
    for pid, t in store.named_tensors():
        g = grads[pid]
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient for {pid}")
        v = velocity[pid]
        v *= momentum
        v += g
        if mask is not None:
            v[mask.masks[pid]] = 0.0
        step = (lr[pid] if isinstance(lr, dict) else lr) * v
        np.copyto(t.data, np.where(step == 0.0, t.data, t.data - step))


def train_domain(net, domain, strategy, schedule, state, domain_index, decay_lr=None, logger=None):
    """Train one domain in place; returns per-epoch mean losses."""
    if strategy.needs_importance and domain_index > 0 and state.omega is None:
        raise TrainingError(
            f"strategy {strategy.kind} needs an importance map before domain {domain_index + 1}"
        )
    if decay_lr is None:
        decay_lr = domain_index == 0
    hooks = build_hooks(strategy, state, net.params.total_count())
    if hooks.dropout_active and strategy.dropout_rate > 0.0 and net.config.dropout_rate <= 0.0:
        raise TrainingError("dropout strategy needs a network built with dropout_rate > 0")

    images, labels = domain.stacked()
    M = images.shape[0]
    shuffle_rng = _rng(schedule.seed, 1, domain_index)
    dropout_rng = _rng(schedule.seed, 2, domain_index)
    velocity = {pid: np.zeros_like(t.data) for pid, t in net.params.named_tensors()}

    epoch_losses = []
    for epoch in range(1, schedule.epochs_per_domain + 1):
        base_lr = schedule.base_lr(epoch, decay_lr)
        lr = hooks.lr_map_fn(base_lr) if hooks.lr_map_fn is not None else base_lr
        order = shuffle_rng.permutation(M)
        losses = []
        for step, start in enumerate(range(0, M, schedule.batch_size), start=1):
            idx = order[start : start + schedule.batch_size]
            net.params.zero_grads()
            T.clear_graph()
            try:
                logits = net.forward_logits(
                    T.Tensor(images[idx]), hooks.dropout_active, dropout_rng
                )
                loss = T.cross_entropy_loss(logits, labels[idx])
                T.backward(loss)
            except NonFiniteError as exc:
                T.clear_graph()
                raise TrainingError(
                    f"diverged at domain {domain_index + 1} epoch {epoch} step {step}: {exc}"
                )
            loss_value = loss.item()

            grads = {}
            for pid, t in net.params.named_tensors():
                grads[pid] = t.grad if t.grad is not None else np.zeros_like(t.data)
            if hooks.penalty_fn is not None:
                penalty, pen_grads = hooks.penalty_fn(net.params)
                loss_value += penalty
                for pid in grads:
                    grads[pid] = grads[pid] + pen_grads[pid]
            if hooks.l2_coefficient != 0.0:
                for pid, t in net.params.named_tensors():
                    grads[pid] = grads[pid] + hooks.l2_coefficient * t.data

            try:
                sgd_momentum_step(
                    net.params, grads, lr, schedule.momentum, velocity, hooks.freeze_mask
                )
            except TrainingError as exc:
                raise TrainingError(
                    f"domain {domain_index + 1} epoch {epoch} step {step}: {exc}"
                )
            losses.append(loss_value)
            if logger is not None:
                logger.step(domain_index + 1, epoch, step, loss_value, base_lr)
        epoch_losses.append(float(np.mean(losses)))
        net.params.zero_grads()
    return epoch_losses


def evaluate_mean_dice(net, eval_set):
    """Mean over eval images of the foreground mean Dice."""
    images, gts = eval_set.stacked()
    probs = net.predict(images)
    preds = np.argmax(probs.data, axis=1)
    scores = [
        foreground_mean_dice(preds[i], gts[i], eval_set.num_classes) for i in range(len(gts))
    ]
    return float(np.mean(scores))


def _concat_domains(domains):
    first = domains[0]
    images = [img for d in domains for img in d.images]
    labels = [lab for d in domains for lab in d.labels]
    merged = type(first)(images, labels, first.shift, first.split, first.seed, first.num_classes)
    return merged


def run_sequence(
    domains,
    strategy,
    schedule,
    eval_sets,
    net_config,
    output_dir=None,
    resume_from=None,
    logger=None,
):
    """Train sequentially over all domains and fill the train-test matrix.

    Returns a SequenceResult; on training failure the partial result rides on
    the raised TrainingError as `.partial_result`. With `resume_from`, rows
    up to the checkpointed domain stay NaN and training continues after it.
    """
    D = len(domains)
    if D < 2:
        raise SegclError("run_sequence needs at least 2 domains")
    if len(eval_sets) != D:
        raise SegclError(f"need one eval set per domain, got {len(eval_sets)} for {D}")

    net_seed = _derived_seed(schedule.seed, 0)
    state = StrategyState()
    start_domain = 0
    net = SegNet(net_config, net_seed)
    if resume_from is not None:
        bundle = load_checkpoint(resume_from)
        completed = bundle.meta.get("domain_index")
        if completed is None:
            raise TrainingError(f"{resume_from} is not a sequence checkpoint (no domain_index)")
        net = bundle.net
        state = StrategyState(
            theta_star=net.params.snapshot(),
            omega=bundle.importance,
            freeze_mask=bundle.frozen,
        )
        start_domain = int(completed) + 1

    if output_dir is not None:
        os.makedirs(output_dir, exist_ok=True)
    R = np.full((D, D), np.nan)
    result = SequenceResult(matrix=None, R=R)

    for i in range(start_domain, D):
        try:
            if strategy.kind == "joint":
                net = SegNet(net_config, net_seed)
                epoch_log = train_domain(
                    net,
                    _concat_domains(domains[: i + 1]),
                    strategy,
                    schedule,
                    StrategyState(),
                    domain_index=i,
                    decay_lr=True,
                    logger=logger,
                )
            else:
                epoch_log = train_domain(
                    net, domains[i], strategy, schedule, state, domain_index=i, logger=logger
                )
            result.logs.append(epoch_log)

            if strategy.kind != "joint":
                fresh = processed_importance(net, domains[i].images, strategy.granularity)
                state.omega = accumulate(state.omega, fresh, task_index=i + 1)
                state.theta_star = net.params.snapshot()
                if strategy.kind == "mas_fix":
                    state.freeze_mask = build_freeze_mask(
                        state.omega,
                        state.freeze_mask,
                        strategy.beta_per_domain,
                        strategy.min_importance_to_freeze,
                    )
                result.importance_history.append(state.omega.copy())

            for j in range(D):
                R[i, j] = evaluate_mean_dice(net, eval_sets[j])
        except (TrainingError, NonFiniteError) as exc:
            wrapped = exc if isinstance(exc, TrainingError) else TrainingError(
                f"domain {i + 1}: {exc}"
            )
            wrapped.partial_result = result
            raise wrapped from None

        if output_dir is not None:
            path = os.path.join(str(output_dir), f"checkpoint_domain_{i + 1}.ckpt")
            save_checkpoint(
                net,
                path,
                importance=state.omega,
                frozen=state.freeze_mask,
                meta={"domain_index": i, "strategy": strategy.kind, "seed": schedule.seed},
            )
            result.checkpoints.append(path)

    result.final_net = net
    if start_domain == 0:
        result.matrix = TrainTestMatrix(R)
    return result
