"""Bi-level offline behaviour distillation.

The inner loop trains a freshly initialised policy on the synthetic data for
``T`` recorded gradient steps; the outer loop scores the trained policy on a
minibatch of offline states and moves the synthetic data along the gradient
obtained by back-propagating through the whole unroll.

Three outer objectives are available:

``dbc``
    BC loss against the raw offline actions.
``pbc``
    Squared decision difference to the extracted policy ``pi*``.
``av_pbc``
    The same difference weighted per action by ``q*(s, a)``; either summed
    over all actions (``full_sum``) or estimated from one action drawn from
    ``pi*(.|s)`` per state (``sampled``).
"""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .evaluation import EvalProtocol, evaluate_synthetic
from .policy import MlpArchitecture, OptimizerSpec, PolicyParams, forward_tape, init_params, one_hot, train_bc
from .synthetic import SyntheticDataset, init_synthetic

log = logging.getLogger(__name__)

OBJECTIVES = ("dbc", "pbc", "av_pbc")
AV_PBC_MODES = ("full_sum", "sampled")


class DistillationError(RuntimeError):
    pass


@dataclass(frozen=True)
class DistillConfig:
    objective: str = "av_pbc"
    n_syn: int = 16
    inner_steps: int = 30
    outer_steps: int = 2000
    inner_optimizer: OptimizerSpec = OptimizerSpec("gd", lr=0.1, momentum=0.0)
    outer_lr: float = 0.1
    outer_momentum: float = 0.9
    batch_size: int = 64
    av_pbc_mode: str = "full_sum"
    eval_interval: int = 100
    hidden: tuple = (32, 32)
    residual: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective '{self.objective}', expected one of {OBJECTIVES}")
        if self.av_pbc_mode not in AV_PBC_MODES:
            raise ValueError(f"unknown av_pbc mode '{self.av_pbc_mode}'")
        if self.n_syn < 1 or self.inner_steps < 0 or self.outer_steps < 0:
            raise ValueError("n_syn must be >= 1 and step counts >= 0")
        if self.batch_size < 1 or self.eval_interval < 1:
            raise ValueError("batch_size and eval_interval must be >= 1")
        if self.outer_lr < 0 or not 0.0 <= self.outer_momentum < 1.0:
            raise ValueError("outer_lr must be >= 0 and outer_momentum in [0, 1)")

    def arch(self, n_states, n_actions) -> MlpArchitecture:
        return MlpArchitecture((n_states,) + tuple(self.hidden) + (n_actions,), self.residual)


# -- outer objectives -------------------------------------------------------

def _policy_probs(params, states, arch=None):
    """Network probabilities at integer ``states`` on the parameters' tape."""
    if isinstance(params, PolicyParams):
        tape = Tape()
        arch = params.arch
        theta = [tape.constant(x) for x in params.flat()]
    else:
        theta = list(params)
        tape = theta[0].tape
    X = tape.constant(one_hot(states, arch.widths[0]))
    return forward_tape(arch, theta, X)


def outer_loss_dbc(params, states, actions, arch=None):
    """BC loss of the trained policy against one-hot offline actions."""
    probs = _policy_probs(params, states, arch)
    Y = np.zeros(probs.shape)
    Y[np.arange(len(actions)), np.asarray(actions)] = 1.0
    return ad.scale(ad.sum(ad.square(ad.sub(probs, Y))), 1.0 / probs.shape[0])


def outer_loss_pbc(params, states, pi_star, arch=None):
    """Mean over states of ``sum_a (pi(a|s) - pi*(a|s))^2``."""
    probs = _policy_probs(params, states, arch)
    target = np.asarray(getattr(pi_star, "probs", pi_star))[np.asarray(states)]
    return ad.scale(ad.sum(ad.square(ad.sub(probs, target))), 1.0 / probs.shape[0])


def outer_loss_av_pbc(params, states, pi_star, q_star, mode="full_sum", actions=None, arch=None):
    """Action-value weighted decision difference.

    ``full_sum``: mean over states of ``sum_a q*(s,a) (pi(a|s) - pi*(a|s))^2``.
    ``sampled``: mean over ``i`` of ``q*(s_i,a_i) (pi(a_i|s_i) - pi*(a_i|s_i))^2``
    with ``actions`` drawn from ``pi*(.|s_i)`` by the caller.
    """
    q_star = np.asarray(q_star, dtype=float)
    if q_star.min() < 0:
        raise ValueError("q_star must be non-negative")
    states = np.asarray(states)
    probs = _policy_probs(params, states, arch)
    target = np.asarray(getattr(pi_star, "probs", pi_star))[states]
    weights = q_star[states]
    if mode == "sampled":
        if actions is None:
            raise ValueError("sampled mode needs actions drawn from pi*")
        mask = np.zeros(probs.shape)
        mask[np.arange(len(states)), np.asarray(actions)] = 1.0
        weights = weights * mask
    elif mode != "full_sum":
        raise ValueError(f"unknown av_pbc mode '{mode}'")
    sq = ad.square(ad.sub(probs, target))
    return ad.scale(ad.sum(ad.mul(sq, weights)), 1.0 / probs.shape[0])


# -- meta-gradient ----------------------------------------------------------

def meta_gradient(syn: SyntheticDataset, arch: MlpArchitecture, inner_steps, inner_optimizer,
                  outer_loss, init_seed):
    """Exact BPTT gradient of ``outer_loss(theta_T)`` w.r.t. the synthetic data.

    ``outer_loss`` receives the list of final parameter tensors and returns a
    scalar tensor on the same tape. Returns ``(loss, d_state_vectors, d_target_logits)``.
    """
    tape = Tape()
    X = tape.variable(syn.state_vectors)
    L = tape.variable(syn.target_logits)
    Y = ad.softmax_rows(L)
    theta0 = [tape.constant(x) for x in init_params(arch, init_seed).flat()]
    theta_T = train_bc(theta0, X, Y, inner_steps, inner_optimizer, record_tape=True, arch=arch)
    H = outer_loss(theta_T)
    gX, gL = ad.grad(H, [X, L])
    return float(H.value), gX.value, gL.value


# -- main loop --------------------------------------------------------------

@dataclass
class EvalRecord:
    step: int
    outer_loss: float
    return_mean: float
    return_std: float


@dataclass
class DistillReport:
    objective: str
    records: list
    synthetic: SyntheticDataset
    config: DistillConfig
    loss_trace: list = field(default_factory=list)

    def final_return(self, last=5) -> float:
        """Mean normalised return over the last ``last`` evaluations."""
        return float(np.mean([r.return_mean for r in self.records[-last:]]))

    def steps_to_fraction(self, fraction=0.9, last=5) -> int:
        """First evaluated step whose return reaches ``fraction`` of the final return."""
        target = fraction * self.final_return(last)
        for r in self.records:
            if r.return_mean >= target:
                return r.step
        return self.records[-1].step

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "objective", "outer_loss", "return_mean", "return_std"])
            for r in self.records:
                w.writerow([r.step, self.objective, repr(r.outer_loss), repr(r.return_mean), repr(r.return_std)])

    def config_dict(self) -> dict:
        return asdict(self.config)


def _outer_closure(cfg, arch, dataset, pi_star, q_star, idx, rng):
    states = dataset.s[idx]
    if cfg.objective == "dbc":
        actions = dataset.a[idx]
        return lambda th: outer_loss_dbc(th, states, actions, arch)
    probs = np.asarray(getattr(pi_star, "probs", pi_star))
    if cfg.objective == "pbc":
        return lambda th: outer_loss_pbc(th, states, probs, arch)
    actions = None
    if cfg.av_pbc_mode == "sampled":
        cdf = np.cumsum(probs[states], axis=1)
        u = rng.random(len(states))
        actions = np.minimum((cdf < u[:, None]).sum(axis=1), probs.shape[1] - 1)
    return lambda th: outer_loss_av_pbc(th, states, probs, q_star, cfg.av_pbc_mode, actions, arch)


def distill(mdp_for_eval, dataset, pi_star, q_star, config: DistillConfig = DistillConfig(),
            protocol: EvalProtocol | None = None, syn: SyntheticDataset | None = None,
            callback=None, n_jobs=1) -> DistillReport:
    """Run the outer loop for ``config.outer_steps`` iterations.

    Every ``eval_interval`` steps (and at steps 0 and ``outer_steps``) the
    current synthetic data is scored with :func:`evaluate_synthetic` on
    ``mdp_for_eval``, spreading the seeds over ``n_jobs`` processes. Pass
    ``mdp_for_eval=None`` to skip evaluation.
    """
    cfg = config
    if cfg.batch_size > len(dataset):
        raise ValueError(f"batch_size {cfg.batch_size} exceeds dataset size {len(dataset)}")
    protocol = protocol or EvalProtocol(hidden=cfg.hidden, residual=cfg.residual)
    arch = cfg.arch(dataset.n_states, dataset.n_actions)
    syn = (syn or init_synthetic(dataset, cfg.n_syn, cfg.seed)).copy()
    rng = np.random.default_rng(cfg.seed)
    vel_X = np.zeros_like(syn.state_vectors)
    vel_L = np.zeros_like(syn.target_logits)
    records, trace = [], []

    def record(step, loss):
        if mdp_for_eval is None:
            rec = EvalRecord(step, loss, float("nan"), float("nan"))
        else:
            res = evaluate_synthetic(syn, mdp_for_eval, protocol, n_jobs=n_jobs)
            rec = EvalRecord(step, loss, res.mean, res.std)
        records.append(rec)
        log.info("step %d loss %.6g return %.2f +- %.2f", step, loss, rec.return_mean, rec.return_std)
        if callback is not None:
            callback(rec)

    for step in range(0, cfg.outer_steps + 1):
        idx = rng.integers(len(dataset), size=cfg.batch_size)
        closure = _outer_closure(cfg, arch, dataset, pi_star, q_star, idx, rng)
        loss, gX, gL = meta_gradient(syn, arch, cfg.inner_steps, cfg.inner_optimizer, closure,
                                     cfg.seed + step)
        if not (np.isfinite(loss) and np.all(np.isfinite(gX)) and np.all(np.isfinite(gL))):
            raise DistillationError(
                f"non-finite outer loss or meta-gradient at step {step} (loss={loss}, "
                f"|dX|max={np.abs(gX).max()}, |dL|max={np.abs(gL).max()})"
            )
        if step == 0:
            # step 0 scores the initial data; no update is applied
            trace.append(loss)
            record(0, loss)
            continue
        vel_X = cfg.outer_momentum * vel_X + gX
        vel_L = cfg.outer_momentum * vel_L + gL
        syn.state_vectors = syn.state_vectors - cfg.outer_lr * vel_X
        syn.target_logits = syn.target_logits - cfg.outer_lr * vel_L
        trace.append(loss)
        if step % cfg.eval_interval == 0 or step == cfg.outer_steps:
            record(step, loss)
    return DistillReport(cfg.objective, records, syn, cfg, trace)
