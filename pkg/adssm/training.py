"""Adam optimization of the ELBO with linear KL annealing and checkpoints."""
import collections
import logging
import math
import os
import time
from typing import Dict, List, Optional, Sequence, Tuple

import attr
import numpy as np
import torch

from adssm import config as _config
from adssm import dataset as _dataset
from adssm import exceptions
from adssm import io
from adssm import model

_LOGGER = logging.getLogger(__name__)

BEST_CHECKPOINT = 'best.ckpt'
LAST_CHECKPOINT = 'last.ckpt'
METRICS_LOG = 'metrics.csv'

_PARAM = 'param.'
_FIRST_MOMENT = 'adam.m.'
_SECOND_MOMENT = 'adam.v.'
_STATE = 'state.'

Tensors = Dict[str, torch.Tensor]


@attr.s(auto_attribs=True, frozen=True)
class Schedule:
    """Epoch budget, minibatch size and KL annealing horizon."""

    total_epochs: int = 5000
    batch_size: int = 128
    anneal_end_epoch: int = 1250
    checkpoint_every: int = 100
    grad_clip: float = 10.0

    def __attrs_post_init__(self):
        if self.batch_size < 1 or self.anneal_end_epoch < 1:
            raise exceptions.InvalidArgumentError(
                'batch_size and anneal_end_epoch must be positive.')
        if self.anneal_end_epoch > self.total_epochs:
            raise exceptions.InvalidArgumentError(
                f'anneal_end_epoch {self.anneal_end_epoch} exceeds '
                f'total_epochs {self.total_epochs}.')

    @classmethod
    def from_config(cls, conf: _config.Config) -> 'Schedule':
        """Builds a schedule, shortening the ramp to fit short runs."""
        anneal_end = conf.anneal_end_epoch
        if anneal_end > conf.epochs:
            anneal_end = conf.epochs
            _LOGGER.warning('anneal_end_epoch %d exceeds epochs %d; the KL '
                            'ramp now ends at epoch %d.',
                            conf.anneal_end_epoch, conf.epochs, anneal_end)
        return cls(total_epochs=conf.epochs,
                   batch_size=conf.batch_size,
                   anneal_end_epoch=anneal_end,
                   checkpoint_every=conf.checkpoint_every,
                   grad_clip=conf.grad_clip)


@attr.s(auto_attribs=True, eq=False)
class OptimizerState:
    """Adam moment accumulators and settings."""

    m: Tensors
    v: Tensors
    step: int = 0
    lr: float = 0.0008
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params: Tensors, **settings) -> 'OptimizerState':
        """Returns a fresh state with zero moments shaped like params."""
        return cls(
            m=collections.OrderedDict(
                (name, torch.zeros_like(p)) for name, p in params.items()),
            v=collections.OrderedDict(
                (name, torch.zeros_like(p)) for name, p in params.items()),
            **settings)


@attr.s(auto_attribs=True, frozen=True)
class EpochRecord:
    """One row of the training metrics log."""

    epoch: int
    beta: float
    train_loss: float
    val_loss: float
    wall_clock_s: float

    def as_row(self) -> Tuple:
        """Returns the values in log column order."""
        return attr.astuple(self)


@attr.s(auto_attribs=True, eq=False)
class TrainState:
    """Everything needed to continue training exactly where it stopped."""

    network: model.AdssmNetwork
    optimizer: OptimizerState
    epoch: int = 0
    beta: float = 0.0
    seed: int = 0
    best_loss: float = math.inf
    history: List[EpochRecord] = attr.Factory(list)


def adam_step(params: Tensors, grads: Tensors,
              opt: OptimizerState) -> Tuple[Tensors, OptimizerState]:
    """Applies one bias-corrected Adam update.

    Raises:
        NonFiniteError naming the first parameter with a non-finite gradient.
    """
    for name, grad in grads.items():
        if not bool(torch.isfinite(grad).all()):
            raise exceptions.NonFiniteError(
                f'Non-finite gradient for {name} at step {opt.step + 1}.',
                name=name)
    step = opt.step + 1
    first_correction = 1 - opt.beta1 ** step
    second_correction = 1 - opt.beta2 ** step
    new_params = collections.OrderedDict()
    new_m = collections.OrderedDict()
    new_v = collections.OrderedDict()
    for name, param in params.items():
        grad = grads[name]
        m = opt.beta1 * opt.m[name] + (1 - opt.beta1) * grad
        v = opt.beta2 * opt.v[name] + (1 - opt.beta2) * grad * grad
        m_hat = m / first_correction
        v_hat = v / second_correction
        new_params[name] = param - opt.lr * m_hat / (torch.sqrt(v_hat) + opt.eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, attr.evolve(opt, m=new_m, v=new_v, step=step)


def beta_at(epoch: int, sched: Schedule) -> float:
    """Linear KL weight ramp from 0 at epoch 0 to 1 at anneal_end_epoch."""
    if not 0 <= epoch <= sched.total_epochs:
        raise exceptions.InvalidArgumentError(
            f'Epoch {epoch} outside [0, {sched.total_epochs}].')
    return min(1.0, epoch / sched.anneal_end_epoch)


def clip_gradients(grads: Tensors, max_norm: float) -> Tuple[Tensors, float]:
    """Rescales gradients whose global norm exceeds max_norm."""
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return collections.OrderedDict(
        (name, g * scale) for name, g in grads.items()), norm


def epoch_batches(chunks: Sequence[_dataset.ChunkPair], batch_size: int,
                  seed: int, epoch: int) -> List[List[_dataset.ChunkPair]]:
    """Shuffled minibatches drawn within buckets of equal interval count."""
    rng = np.random.default_rng([seed, epoch])
    buckets: Dict[int, List[_dataset.ChunkPair]] = {}
    for item in chunks:
        buckets.setdefault(item.steps, []).append(item)
    batches = []
    for steps in sorted(buckets):
        bucket = buckets[steps]
        order = rng.permutation(len(bucket))
        for start in range(0, len(bucket), batch_size):
            batches.append([bucket[i] for i in order[start:start + batch_size]])
    return [batches[i] for i in rng.permutation(len(batches))]


def network_from_config(conf: _config.Config,
                        dims: Optional[model.Dims] = None) -> model.AdssmNetwork:
    """Builds a freshly initialized network for a configuration."""
    dims = dims or model.Dims(n_pp=conf.interval_length,
                              n_rr=conf.interval_length,
                              latent=conf.latent,
                              hidden=conf.hidden,
                              attn_hidden=conf.attn_hidden)
    return model.AdssmNetwork(dims,
                              strict_posterior=conf.strict_posterior,
                              use_attention=conf.use_attention,
                              seed=conf.seed)


def save_state(path: str, state: TrainState):
    """Writes parameters, Adam moments and loop counters to one checkpoint."""
    opt = state.optimizer
    tensors = collections.OrderedDict()
    for name, param in state.network.named_tensors().items():
        tensors[_PARAM + name] = param
    for name in opt.m:
        tensors[_FIRST_MOMENT + name] = opt.m[name]
        tensors[_SECOND_MOMENT + name] = opt.v[name]
    scalars = {'epoch': state.epoch, 'beta': state.beta, 'seed': state.seed,
               'best_loss': state.best_loss, 'step': opt.step, 'lr': opt.lr,
               'beta1': opt.beta1, 'beta2': opt.beta2, 'eps': opt.eps}
    for name, value in scalars.items():
        tensors[_STATE + name] = torch.tensor(float(value), dtype=model.DTYPE)
    io.save_checkpoint(path, state.network.dims, tensors)


def _group(tensors: Tensors, prefix: str) -> Tensors:
    return collections.OrderedDict(
        (name[len(prefix):], value) for name, value in tensors.items()
        if name.startswith(prefix))


def load_network(path: str,
                 strict_posterior: bool = False,
                 use_attention: bool = True) -> model.AdssmNetwork:
    """Rebuilds a network from the parameters stored in a checkpoint."""
    dims, tensors = io.load_checkpoint(path)
    network = model.AdssmNetwork(dims,
                                 strict_posterior=strict_posterior,
                                 use_attention=use_attention)
    params = _group(tensors, _PARAM)
    expected = set(name for name, _ in network.named_parameters())
    if set(params) != expected:
        raise exceptions.CheckpointError(
            f'{path}: parameters do not match the network layout.')
    network.assign(params)
    return network


def load_state(path: str,
               strict_posterior: bool = False,
               use_attention: bool = True) -> TrainState:
    """Reads a checkpoint written by save_state."""
    network = load_network(path, strict_posterior, use_attention)
    _, tensors = io.load_checkpoint(path)
    scalars = {name: float(value)
               for name, value in _group(tensors, _STATE).items()}
    opt = OptimizerState(m=_group(tensors, _FIRST_MOMENT),
                         v=_group(tensors, _SECOND_MOMENT),
                         step=int(scalars['step']),
                         lr=scalars['lr'],
                         beta1=scalars['beta1'],
                         beta2=scalars['beta2'],
                         eps=scalars['eps'])
    return TrainState(network=network,
                      optimizer=opt,
                      epoch=int(scalars['epoch']),
                      beta=scalars['beta'],
                      seed=int(scalars['seed']),
                      best_loss=scalars['best_loss'])


def _run_epoch(state: TrainState, chunks: Sequence[_dataset.ChunkPair],
               sched: Schedule, beta: float) -> float:
    network = state.network
    total = 0.0
    for batch in epoch_batches(chunks, sched.batch_size, state.seed,
                               state.epoch):
        step_seed = model.chunk_seed(state.seed,
                                     f'step:{state.optimizer.step}')
        loss, grads = model.loss_and_gradients(batch, network, beta, step_seed)
        grads, norm = clip_gradients(grads, sched.grad_clip)
        if norm > sched.grad_clip:
            _LOGGER.debug('Clipped gradient norm %.3f at step %d.', norm,
                          state.optimizer.step)
        params, state.optimizer = adam_step(network.named_tensors(), grads,
                                            state.optimizer)
        network.assign(params)
        total += loss * len(batch)
    return total / len(chunks)


def train(data: _dataset.Dataset,
          sched: Schedule,
          seed: int,
          checkpoint_dir: str,
          *,
          conf: Optional[_config.Config] = None,
          resume_from: str = '') -> TrainState:
    """Trains a network, logging every epoch and checkpointing along the way.

    Args:
        data: Prepared chunks; the train split must not be empty.
        sched: Epoch budget, batch size and annealing horizon.
        seed: Seed of initialization, shuffling and reparameterization noise.
        checkpoint_dir: Receives the metrics log, periodic, best and last
            checkpoints.
        conf: Network widths, optimizer settings and flags; defaults apply
            when omitted.
        resume_from: Checkpoint to continue from instead of a fresh start.

    Returns:
        The state after the last epoch.
    """
    conf = conf or _config.Config()
    if not data.train:
        raise exceptions.InvalidArgumentError('Cannot train on an empty dataset.')
    os.makedirs(checkpoint_dir, exist_ok=True)
    log_path = os.path.join(checkpoint_dir, METRICS_LOG)

    if resume_from:
        state = load_state(resume_from, conf.strict_posterior,
                           conf.use_attention)
        if state.seed != seed:
            raise exceptions.CheckpointError(
                f'{resume_from} was trained with seed {state.seed}, not {seed}.')
        _LOGGER.info('Resuming from %s at epoch %d.', resume_from, state.epoch)
    else:
        network = network_from_config(attr.evolve(conf, seed=seed))
        optimizer = OptimizerState.zeros(network.named_tensors(),
                                         lr=conf.learning_rate,
                                         beta1=conf.beta1,
                                         beta2=conf.beta2,
                                         eps=conf.eps)
        state = TrainState(network=network, optimizer=optimizer, seed=seed)
        if os.path.exists(log_path):
            os.remove(log_path)

    started = time.perf_counter()
    while state.epoch < sched.total_epochs:
        epoch = state.epoch
        beta = beta_at(epoch, sched)
        train_loss = _run_epoch(state, data.train, sched, beta)
        if data.validation:
            val_loss = model.evaluate_loss(data.validation, state.network,
                                           beta, seed)
        else:
            val_loss = math.nan
        elapsed = time.perf_counter() - started if conf.record_wall_clock else 0.0
        record = EpochRecord(epoch, beta, train_loss, val_loss, elapsed)
        state.history.append(record)
        state.beta = beta
        state.epoch = epoch + 1
        io.append_training_log(log_path, record.as_row())
        _LOGGER.info('epoch=%d beta=%.4f train_loss=%.6f val_loss=%.6f',
                     epoch, beta, train_loss, val_loss)

        selection = train_loss if math.isnan(val_loss) else val_loss
        if selection < state.best_loss:
            state.best_loss = selection
            save_state(os.path.join(checkpoint_dir, BEST_CHECKPOINT), state)
        if state.epoch % sched.checkpoint_every == 0:
            save_state(os.path.join(checkpoint_dir,
                                    f'epoch_{state.epoch:05d}.ckpt'), state)
    save_state(os.path.join(checkpoint_dir, LAST_CHECKPOINT), state)
    return state
