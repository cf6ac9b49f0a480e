"""Attention-based deep state-space model translating PP into RR intervals.

Generative pathway (prior): an attention context over the embedded PP
intervals drives a gated Gaussian transition between latent states, and each
latent state emits one RR interval through an MLP with identity covariance.

Inference pathway (posterior): backward and forward GRUs over the embedded RR
intervals are combined with the previous latent state to parametrize a
diagonal Gaussian per step, sampled with the reparameterization trick.

Every tensor is float64 and every random draw comes from an explicitly seeded
generator, so forward passes and gradients are bitwise reproducible.
"""
import collections
import logging
import math
import zlib
from typing import Dict, List, Optional, Protocol, Sequence, Tuple, Union

import attr
import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from adssm import exceptions
from adssm import signals

_LOGGER = logging.getLogger(__name__)

DTYPE = torch.float64
VARIANCE_FLOOR = 1e-4
GATE_BIAS_INIT = -2.0
LOG_2PI = math.log(2 * math.pi)

ArrayLike = Union[torch.Tensor, np.ndarray, signals.IntervalSequence]


@attr.s(auto_attribs=True, frozen=True)
class Dims:
    """Layer widths of the network."""

    n_pp: int = attr.ib(default=signals.INTERVAL_LENGTH)
    n_rr: int = attr.ib(default=signals.INTERVAL_LENGTH)
    latent: int = attr.ib(default=128)
    hidden: int = attr.ib(default=256)
    attn_hidden: int = attr.ib(default=128)

    @n_pp.validator
    @n_rr.validator
    @latent.validator
    @hidden.validator
    @attn_hidden.validator
    def _check_positive(self, attribute, value):
        if int(value) <= 0:
            raise exceptions.InvalidArgumentError(
                f'{attribute.name} must be positive, got {value}.')

    def as_tuple(self) -> Tuple[int, ...]:
        """Returns the widths in checkpoint header order."""
        return attr.astuple(self)


TINY_DIMS = Dims(latent=4, hidden=6, attn_hidden=5)


@attr.s(auto_attribs=True, eq=False)
class LatentPath:
    """Per-step Gaussian latent states for one chunk."""

    means: torch.Tensor
    variances: torch.Tensor
    samples: torch.Tensor
    context: Optional[torch.Tensor] = None
    attention: Optional[torch.Tensor] = None


@attr.s(auto_attribs=True, eq=False)
class ElboBreakdown:
    """Single-sample evidence lower bound of one chunk."""

    reconstruction: float
    kl_terms: np.ndarray
    beta: float
    total: float


class ChunkLike(Protocol):
    """Anything carrying a chunk id with paired PP (x) and RR (y) intervals."""

    chunk_id: str
    x: ArrayLike
    y: ArrayLike


def _mlp(fan_in: int, hidden: int, fan_out: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(fan_in, hidden), nn.ReLU(),
                         nn.Linear(hidden, hidden), nn.ReLU(),
                         nn.Linear(hidden, fan_out))


class AdssmNetwork(nn.Module):
    """All trainable weights of the score, transition, emission and posterior.

    Args:
        dims: Layer widths.
        strict_posterior: Run the forward GRU over y[t:] for every step
            instead of a single pass over the whole sequence.
        use_attention: Score PP intervals against the latent state; when
            False every interval gets the uniform weight 1/T.
        seed: Seed of the weight initialization.
    """

    def __init__(self,
                 dims: Dims = Dims(),
                 *,
                 strict_posterior: bool = False,
                 use_attention: bool = True,
                 seed: int = 0):
        super().__init__()
        self.dims = dims
        self.strict_posterior = strict_posterior
        self.use_attention = use_attention

        latent, hidden = dims.latent, dims.hidden
        # score
        self.embed_x = nn.Linear(dims.n_pp, latent, bias=False)
        self.score_hidden = nn.Linear(2 * latent, dims.attn_hidden)
        self.score_out = nn.Linear(dims.attn_hidden, 1, bias=False)
        # transition
        self.gate = _mlp(2 * latent, hidden, latent)
        self.proposal = _mlp(2 * latent, hidden, latent)
        self.linear_mean = nn.Linear(2 * latent, latent)
        self.prior_variance = nn.Linear(latent, latent)
        # emission
        self.emission = _mlp(latent, hidden, dims.n_rr)
        # posterior
        self.embed_y = nn.Linear(dims.n_rr, hidden, bias=False)
        self.backward_gru = nn.GRUCell(hidden, hidden)
        self.forward_gru = nn.GRUCell(hidden, hidden)
        self.combiner = nn.Linear(latent, hidden)
        self.posterior_mean = nn.Linear(hidden, latent)
        self.posterior_variance = nn.Linear(hidden, latent)
        self.z_init = nn.Parameter(torch.zeros(latent))

        self.to(DTYPE)
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int = 0):
        """Uniform(+-1/sqrt(fan_in)) weights, zero biases, gate bias of -2."""
        generator = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, param in self.named_parameters():
                if param.dim() < 2:
                    param.zero_()
                    continue
                bound = 1.0 / math.sqrt(param.shape[1])
                param.uniform_(-bound, bound, generator=generator)
            self.gate[-1].bias.fill_(GATE_BIAS_INIT)
        _LOGGER.debug('Initialized %d parameters with seed %d.',
                      parameter_count(self), seed)

    def named_tensors(self) -> Dict[str, torch.Tensor]:
        """Returns detached copies of every parameter by name."""
        return collections.OrderedDict(
            (name, param.detach().clone())
            for name, param in self.named_parameters())

    def assign(self, tensors: Dict[str, torch.Tensor]):
        """Copies the given tensors into the parameters of the same name."""
        with torch.no_grad():
            for name, param in self.named_parameters():
                param.copy_(tensors[name])

    def is_finite(self) -> bool:
        """Returns whether every parameter is finite."""
        return all(bool(torch.isfinite(p).all()) for p in self.parameters())


def parameter_count(network: AdssmNetwork) -> int:
    """Returns the number of trainable scalars."""
    return sum(p.numel() for p in network.parameters())


def as_tensor(value: ArrayLike) -> torch.Tensor:
    """Returns the value as a float64 tensor."""
    if isinstance(value, signals.IntervalSequence):
        value = value.segments
    return torch.as_tensor(value, dtype=DTYPE)


def chunk_seed(seed: int, chunk_id: str) -> int:
    """Derives a per-chunk seed that does not depend on batch composition."""
    sequence = np.random.SeedSequence([seed, zlib.crc32(chunk_id.encode())])
    return int(sequence.generate_state(1, dtype=np.uint64)[0]) >> 1


def draw_noise(seed: int, steps: int, latent: int) -> torch.Tensor:
    """Standard normal noise for one latent path."""
    generator = torch.Generator().manual_seed(seed)
    return torch.randn((steps, latent), generator=generator, dtype=DTYPE)


def positive_variance(raw: torch.Tensor) -> torch.Tensor:
    """Softplus plus the variance floor."""
    return F.softplus(raw) + VARIANCE_FLOOR


def score(z_prev: torch.Tensor, embedded: torch.Tensor,
          network: AdssmNetwork) -> torch.Tensor:
    """Alignment scores v_s' tanh(W_s [z; W_x x_i] + b_s) over the intervals.

    Args:
        z_prev: (..., latent) previous latent states.
        embedded: (..., T, latent) embedded PP intervals, broadcastable
            against z_prev's leading dimensions.

    Returns:
        (..., T) scores.
    """
    query, keys = torch.broadcast_tensors(z_prev.unsqueeze(-2), embedded)
    hidden = torch.tanh(network.score_hidden(torch.cat([query, keys], -1)))
    return network.score_out(hidden).squeeze(-1)


def _context(z_prev: torch.Tensor, embedded: torch.Tensor,
             network: AdssmNetwork) -> Tuple[torch.Tensor, torch.Tensor]:
    if network.use_attention:
        alpha = torch.softmax(score(z_prev, embedded, network), dim=-1)
    else:
        shape = torch.broadcast_shapes(z_prev.shape[:-1] + (1,),
                                       embedded.shape[:-1])
        alpha = torch.full(shape, 1.0 / embedded.shape[-2], dtype=DTYPE)
    context = (alpha.unsqueeze(-1) * embedded).sum(-2)
    return context, alpha


def attend(z_prev: ArrayLike, x: ArrayLike,
           network: AdssmNetwork) -> Tuple[torch.Tensor, torch.Tensor]:
    """Returns the context sum_i alpha_i W_x x_i and the weights alpha."""
    embedded = network.embed_x(as_tensor(x))
    return _context(as_tensor(z_prev), embedded, network)


def transition(z: torch.Tensor, context: torch.Tensor,
               network: AdssmNetwork) -> Tuple[torch.Tensor, torch.Tensor]:
    """Gated transition: mean and variance of p(z_next | z, c_next)."""
    joint = torch.cat([z, context], -1)
    gate = torch.sigmoid(network.gate(joint))
    proposal = network.proposal(joint)
    mean = (1 - gate) * network.linear_mean(joint) + gate * proposal
    variance = positive_variance(network.prior_variance(F.relu(proposal)))
    return mean, variance


def emit(z: torch.Tensor, network: AdssmNetwork) -> torch.Tensor:
    """Mean of the RR interval emitted by a latent state."""
    return network.emission(z)


def log_likelihood(y: torch.Tensor, mean: torch.Tensor) -> torch.Tensor:
    """Log-density of y under N(mean, I), summed over the last axis."""
    return -0.5 * ((y - mean) ** 2).sum(-1) - 0.5 * y.shape[-1] * LOG_2PI


def kl_diag_gaussians(mean_q: ArrayLike, var_q: ArrayLike,
                      mean_p: ArrayLike, var_p: ArrayLike) -> torch.Tensor:
    """KL(q || p) between diagonal Gaussians, summed over the last axis.

    Raises:
        InvalidArgumentError if a variance is not positive.
    """
    mean_q, var_q = as_tensor(mean_q), as_tensor(var_q)
    mean_p, var_p = as_tensor(mean_p), as_tensor(var_p)
    if bool((var_q <= 0).any()) or bool((var_p <= 0).any()):
        raise exceptions.InvalidArgumentError(
            'KL divergence needs strictly positive variances.')
    terms = (0.5 * (torch.log(var_p) - torch.log(var_q)) +
             (var_q + (mean_q - mean_p) ** 2) / (2 * var_p) - 0.5)
    return terms.sum(-1)


def _forward_states(embedded: torch.Tensor,
                    network: AdssmNetwork) -> List[torch.Tensor]:
    batch, steps = embedded.shape[:2]
    zeros = embedded.new_zeros(batch, network.dims.hidden)
    if not network.strict_posterior:
        states, state = [], zeros
        for t in range(steps):
            state = network.forward_gru(embedded[:, t], state)
            states.append(state)
        return states
    states = []
    for start in range(steps):
        state = zeros
        for t in range(start, steps):
            state = network.forward_gru(embedded[:, t], state)
        states.append(state)
    return states


def _posterior(y: torch.Tensor, network: AdssmNetwork,
               noise: torch.Tensor) -> Tuple[torch.Tensor, ...]:
    """Batched posterior recursion over y of shape (B, T, n_rr)."""
    batch, steps = y.shape[:2]
    embedded = network.embed_y(y)

    backward: List[Optional[torch.Tensor]] = [None] * steps
    state = embedded.new_zeros(batch, network.dims.hidden)
    for t in reversed(range(steps)):
        state = network.backward_gru(embedded[:, t], state)
        backward[t] = state
    forward = _forward_states(embedded, network)

    z = network.z_init.expand(batch, -1)
    means, variances, samples = [], [], []
    for t in range(steps):
        combined = (torch.tanh(network.combiner(z)) + backward[t] +
                    forward[t]) / 3
        mean = network.posterior_mean(combined)
        variance = positive_variance(network.posterior_variance(combined))
        z = mean + torch.sqrt(variance) * noise[:, t]
        means.append(mean)
        variances.append(variance)
        samples.append(z)
    return (torch.stack(means, 1), torch.stack(variances, 1),
            torch.stack(samples, 1))


def _prior_given(samples: torch.Tensor, x: torch.Tensor,
                 network: AdssmNetwork) -> Tuple[torch.Tensor, ...]:
    """Prior of every step given the previous posterior samples."""
    batch = samples.shape[0]
    start = network.z_init.expand(batch, 1, -1)
    previous = torch.cat([start, samples[:, :-1]], 1)
    embedded = network.embed_x(x).unsqueeze(1)
    context, alpha = _context(previous, embedded, network)
    mean, variance = transition(previous, context, network)
    return mean, variance, context, alpha


def elbo_terms(x: torch.Tensor, y: torch.Tensor, network: AdssmNetwork,
               noise: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Batched reconstruction (B,) and per-step KL terms (B, T)."""
    if x.shape[:2] != y.shape[:2]:
        raise exceptions.ShapeMismatchError(
            f'x has {x.shape[1]} intervals but y has {y.shape[1]}.')
    means, variances, samples = _posterior(y, network, noise)
    reconstruction = log_likelihood(y, emit(samples, network)).sum(-1)
    prior_mean, prior_variance, _, _ = _prior_given(samples, x, network)
    kl = kl_diag_gaussians(means, variances, prior_mean, prior_variance)
    return reconstruction, kl


def posterior_path(y: ArrayLike,
                   network: AdssmNetwork,
                   seed: int = 0,
                   noise: Optional[torch.Tensor] = None) -> LatentPath:
    """Samples z_1..z_T from q(z | y) for one chunk."""
    y = as_tensor(y)
    if noise is None:
        noise = draw_noise(seed, y.shape[0], network.dims.latent)
    means, variances, samples = _posterior(y.unsqueeze(0), network,
                                           noise.unsqueeze(0))
    return LatentPath(means=means[0], variances=variances[0],
                      samples=samples[0])


def prior_rollout(x: ArrayLike,
                  network: AdssmNetwork,
                  noise: Optional[torch.Tensor] = None) -> LatentPath:
    """Rolls the prior forward from z_init; mean path when noise is None."""
    embedded = network.embed_x(as_tensor(x))
    z = network.z_init
    means, variances, samples, contexts, alphas = [], [], [], [], []
    for t in range(embedded.shape[0]):
        context, alpha = _context(z, embedded, network)
        mean, variance = transition(z, context, network)
        z = mean if noise is None else mean + torch.sqrt(variance) * noise[t]
        means.append(mean)
        variances.append(variance)
        samples.append(z)
        contexts.append(context)
        alphas.append(alpha)
    return LatentPath(means=torch.stack(means),
                      variances=torch.stack(variances),
                      samples=torch.stack(samples),
                      context=torch.stack(contexts),
                      attention=torch.stack(alphas))


def elbo(x: ArrayLike, y: ArrayLike, network: AdssmNetwork, beta: float,
         seed: int = 0) -> ElboBreakdown:
    """Single-sample reparameterized lower bound of log p(y | x)."""
    if not 0 <= beta <= 1:
        raise exceptions.InvalidArgumentError(
            f'beta must lie in [0, 1], got {beta}.')
    x, y = as_tensor(x), as_tensor(y)
    if x.shape[0] != y.shape[0]:
        raise exceptions.ShapeMismatchError(
            f'x has {x.shape[0]} intervals but y has {y.shape[0]}.')
    noise = draw_noise(seed, y.shape[0], network.dims.latent)
    with torch.no_grad():
        reconstruction, kl = elbo_terms(x.unsqueeze(0), y.unsqueeze(0),
                                        network, noise.unsqueeze(0))
    reconstruction = float(reconstruction[0])
    kl_terms = kl[0].numpy().copy()
    return ElboBreakdown(reconstruction=reconstruction,
                         kl_terms=kl_terms,
                         beta=beta,
                         total=reconstruction - beta * float(kl[0].sum()))


def batch_elbo(batch: Sequence[ChunkLike], network: AdssmNetwork,
               beta: float, seed: int) -> torch.Tensor:
    """ELBO of every chunk in batch order; chunks of equal T share a pass."""
    groups: Dict[int, List[int]] = collections.OrderedDict()
    tensors = [(as_tensor(item.x), as_tensor(item.y)) for item in batch]
    for index, (x, y) in enumerate(tensors):
        if x.shape != y.shape:
            raise exceptions.ShapeMismatchError(
                f'Chunk {batch[index].chunk_id} pairs {x.shape[0]} PP with '
                f'{y.shape[0]} RR intervals.')
        groups.setdefault(x.shape[0], []).append(index)

    totals: List[Optional[torch.Tensor]] = [None] * len(batch)
    for steps, indices in groups.items():
        x = torch.stack([tensors[i][0] for i in indices])
        y = torch.stack([tensors[i][1] for i in indices])
        noise = torch.stack([
            draw_noise(chunk_seed(seed, batch[i].chunk_id), steps,
                       network.dims.latent) for i in indices])
        reconstruction, kl = elbo_terms(x, y, network, noise)
        total = reconstruction - beta * kl.sum(-1)
        for row, index in enumerate(indices):
            totals[index] = total[row]
    return torch.stack(totals)


def loss_and_gradients(
        batch: Sequence[ChunkLike],
        network: AdssmNetwork,
        beta: float,
        seed: int,
) -> Tuple[float, Dict[str, torch.Tensor]]:
    """Negative mean ELBO over the batch and its exact gradients.

    Raises:
        NonFiniteError naming the first chunk whose ELBO is not finite.
    """
    if not batch:
        raise exceptions.InvalidArgumentError('Cannot evaluate an empty batch.')
    totals = batch_elbo(batch, network, beta, seed)
    finite = torch.isfinite(totals.detach())
    if not bool(finite.all()):
        bad = batch[int((~finite).nonzero()[0])].chunk_id
        raise exceptions.NonFiniteError(
            f'Non-finite ELBO in chunk {bad}.', chunk_id=bad)
    loss = -totals.mean()
    names, params = zip(*network.named_parameters())
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return float(loss.detach()), collections.OrderedDict(
        (name, torch.zeros_like(param) if grad is None else grad.detach())
        for name, param, grad in zip(names, params, grads))


def evaluate_loss(batch: Sequence[ChunkLike], network: AdssmNetwork,
                  beta: float, seed: int) -> float:
    """Negative mean ELBO without building a gradient graph."""
    with torch.no_grad():
        return float(-batch_elbo(batch, network, beta, seed).mean())


@attr.s(auto_attribs=True, frozen=True)
class _Example:
    chunk_id: str
    x: torch.Tensor
    y: torch.Tensor


def check_gradients(seed: int = 0,
                    dims: Dims = TINY_DIMS,
                    steps: int = 3,
                    beta: float = 0.5,
                    delta: float = 1e-4) -> Dict[str, float]:
    """Compares analytic gradients with central finite differences.

    Returns:
        Relative error ||analytic - numeric|| / max(||analytic||, ||numeric||)
        for every parameter tensor of a freshly initialized network.
    """
    network = AdssmNetwork(dims, seed=seed)
    rng = np.random.default_rng(seed)
    batch = [
        _Example(f'gradcheck:{i}',
                 torch.as_tensor(rng.uniform(-1, 1, (steps, dims.n_pp)),
                                 dtype=DTYPE),
                 torch.as_tensor(rng.uniform(-1, 1, (steps, dims.n_rr)),
                                 dtype=DTYPE))
        for i in range(2)]
    _, analytic = loss_and_gradients(batch, network, beta, seed)

    errors = collections.OrderedDict()
    with torch.no_grad():
        for name, param in network.named_parameters():
            flat = param.view(-1)
            numeric = torch.zeros_like(flat)
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + delta
                upper = evaluate_loss(batch, network, beta, seed)
                flat[i] = original - delta
                lower = evaluate_loss(batch, network, beta, seed)
                flat[i] = original
                numeric[i] = (upper - lower) / (2 * delta)
            expected = analytic[name].view(-1)
            scale = max(float(expected.norm()), float(numeric.norm()), 1e-12)
            errors[name] = float((expected - numeric).norm()) / scale
    _LOGGER.info('Gradient check: max relative error %.3e over %d groups.',
                 max(errors.values()), len(errors))
    return errors
