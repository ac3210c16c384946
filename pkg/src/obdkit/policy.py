"""MLP policies on the tape: forward pass, BC loss and inner-loop training."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor

OPTIMIZERS = ("gd", "gd_momentum", "adam_style", "adamw_style")


@dataclass(frozen=True)
class MlpArchitecture:
    """Layer widths from input (one-hot state) to output (actions).

    ``depth`` counts every width, so ``(S, 32, 32, A)`` is the four-layer
    default and ``(S, A)`` is a linear softmax policy. With ``residual`` each
    hidden-to-hidden layer becomes ``h + relu(h W + b)``.
    """

    widths: tuple
    residual: bool = False
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2:
            raise ValueError("depth must be >= 2")
        if min(self.widths) < 1:
            raise ValueError("widths must be >= 1")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation '{self.activation}'")
        if self.residual:
            hidden = self.widths[1:-1]
            if len(hidden) < 2 or len(set(hidden)) != 1:
                raise ValueError("residual blocks need at least two equal hidden widths")

    @property
    def depth(self) -> int:
        return len(self.widths)

    @classmethod
    def default(cls, n_states, n_actions, width=32, depth=4, residual=False):
        return cls((n_states,) + (width,) * (depth - 2) + (n_actions,), residual)

    @property
    def label(self) -> str:
        return f"{self.depth}-layer" + ("-residual" if self.residual else "")


@dataclass(eq=False)
class PolicyParams:
    arch: MlpArchitecture
    weights: list
    biases: list
    seed: int | None = None

    def flat(self) -> list:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    @classmethod
    def from_flat(cls, arch, arrays, seed=None) -> "PolicyParams":
        arrays = [np.asarray(getattr(x, "value", x), dtype=np.float64) for x in arrays]
        return cls(arch, arrays[0::2], arrays[1::2], seed)

    def to_dict(self) -> dict:
        return {
            "arch": asdict(self.arch),
            "seed": self.seed,
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, doc) -> "PolicyParams":
        arch = MlpArchitecture(**doc["arch"])
        ws = [np.asarray(W, dtype=np.float64) for W in doc["weights"]]
        bs = [np.asarray(b, dtype=np.float64) for b in doc["biases"]]
        for i, (W, b) in enumerate(zip(ws, bs)):
            if W.shape != (arch.widths[i], arch.widths[i + 1]) or b.shape != (arch.widths[i + 1],):
                raise ValueError(f"layer {i} has shapes {W.shape}, {b.shape} inconsistent with {arch.widths}")
        return cls(arch, ws, bs, doc.get("seed"))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "PolicyParams":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def init_params(arch: MlpArchitecture, seed) -> PolicyParams:
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for fan_in, fan_out in zip(arch.widths[:-1], arch.widths[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        ws.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return PolicyParams(arch, ws, bs, seed)


def forward_tape(arch: MlpArchitecture, theta: list, X: Tensor) -> Tensor:
    """Action probabilities for the rows of ``X``; ``theta`` is ``[W1, b1, ...]``."""
    if X.shape[-1] != arch.widths[0]:
        raise ad.TapeError(f"feature width {X.shape[-1]} != input width {arch.widths[0]}")
    n_layers = arch.depth - 1
    h = X
    for i in range(n_layers):
        W, b = theta[2 * i], theta[2 * i + 1]
        z = ad.add(ad.matmul(h, W), b)
        if i == n_layers - 1:
            h = z
        elif arch.residual and 0 < i:
            h = ad.add(h, ad.relu(z))
        else:
            h = ad.relu(z)
    return ad.softmax_rows(h)


def forward(params: PolicyParams, state_features) -> np.ndarray:
    tape = Tape()
    theta = [tape.constant(x) for x in params.flat()]
    return forward_tape(params.arch, theta, tape.constant(np.atleast_2d(state_features))).value


def one_hot(states, n_states) -> np.ndarray:
    states = np.asarray(states, dtype=np.int64)
    out = np.zeros((len(states), n_states))
    out[np.arange(len(states)), states] = 1.0
    return out


def squared_error(probs: Tensor, targets) -> Tensor:
    """Mean over rows of the summed squared difference between distributions."""
    targets = ad._lift(targets, probs)
    if probs.shape != targets.shape:
        raise ad.TapeError(f"shape mismatch {probs.shape} vs {targets.shape}")
    return ad.scale(ad.sum(ad.square(ad.sub(probs, targets))), 1.0 / probs.shape[0])


def bc_loss(params, features, targets, arch=None) -> Tensor:
    """BC loss of a network on (features, action-distribution targets).

    ``params`` is either a :class:`PolicyParams` (lifted onto the features'
    tape as constants, or onto a fresh tape) or a flat list of tape tensors
    with ``arch`` given.
    """
    if isinstance(params, PolicyParams):
        arch = params.arch
        tape = features.tape if isinstance(features, Tensor) else Tape()
        theta = [tape.constant(x) for x in params.flat()]
    else:
        theta = list(params)
        tape = theta[0].tape
    X = features if isinstance(features, Tensor) else tape.constant(features)
    return squared_error(forward_tape(arch, theta, X), targets)


@dataclass(frozen=True)
class OptimizerSpec:
    kind: str = "gd"
    lr: float = 0.1
    momentum: float = 0.0
    weight_decay: float = 0.0
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer '{self.kind}', expected one of {OPTIMIZERS}")
        if self.lr <= 0:
            raise ValueError("learning rate must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")

    @property
    def label(self) -> str:
        return {"gd": "SGD", "gd_momentum": "SGDm", "adam_style": "Adam", "adamw_style": "AdamW"}[self.kind]


@dataclass
class _OptState:
    step: int = 0
    slots: list = field(default_factory=list)  # per-parameter buffers


def _opt_init(spec: OptimizerSpec, theta_values) -> _OptState:
    n_slots = {"gd": 0, "gd_momentum": 1, "adam_style": 2, "adamw_style": 2}[spec.kind]
    return _OptState(0, [[np.zeros_like(v) for v in theta_values] for _ in range(n_slots)])


def _opt_step(spec: OptimizerSpec, theta, grads, slots, step):
    """One update on tape tensors. ``slots`` are tensors; returns (theta, slots)."""
    lr, wd = spec.lr, spec.weight_decay
    if spec.kind != "adamw_style" and wd:
        grads = [ad.add(g, ad.scale(p, wd)) for g, p in zip(grads, theta)]
    if spec.kind == "gd":
        return [ad.sub(p, ad.scale(g, lr)) for p, g in zip(theta, grads)], []
    if spec.kind == "gd_momentum":
        vel = [ad.add(ad.scale(v, spec.momentum), g) for v, g in zip(slots[0], grads)]
        return [ad.sub(p, ad.scale(v, lr)) for p, v in zip(theta, vel)], [vel]
    b1, b2 = spec.betas
    m = [ad.add(ad.scale(mi, b1), ad.scale(g, 1 - b1)) for mi, g in zip(slots[0], grads)]
    v = [ad.add(ad.scale(vi, b2), ad.scale(ad.square(g), 1 - b2)) for vi, g in zip(slots[1], grads)]
    c1, c2 = 1.0 / (1 - b1 ** step), 1.0 / (1 - b2 ** step)
    new = []
    for p, mi, vi in zip(theta, m, v):
        upd = ad.div(ad.scale(mi, c1), ad.add(ad.sqrt(ad.scale(vi, c2)), spec.eps))
        if spec.kind == "adamw_style" and wd:
            upd = ad.add(upd, ad.scale(p, wd))
        new.append(ad.sub(p, ad.scale(upd, lr)))
    return new, [m, v]


def train_bc(params0, features, targets, steps, optimizer: OptimizerSpec = OptimizerSpec(),
             record_tape=False, arch=None):
    """Full-batch BC training for ``steps`` updates.

    With ``record_tape`` the whole unroll is recorded on the tape that holds
    ``features``/``targets`` and the final parameters come back as tape
    tensors, so a later :func:`autodiff.grad` reaches the training data.
    Otherwise each step runs on a throwaway tape and a :class:`PolicyParams`
    is returned; the arithmetic is identical in both modes.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if record_tape:
        tape = features.tape
        if isinstance(params0, PolicyParams):
            arch = params0.arch
            theta = [tape.constant(x) for x in params0.flat()]
        else:
            theta = list(params0)
        targets = ad._lift(targets, features)
        state = _opt_init(optimizer, [p.value for p in theta])
        slots = [[tape.constant(x) for x in slot] for slot in state.slots]
        for k in range(1, steps + 1):
            loss = squared_error(forward_tape(arch, theta, features), targets)
            grads = ad.grad(loss, theta)
            theta, slots = _opt_step(optimizer, theta, grads, slots, k)
        return theta

    arch = params0.arch
    X = np.asarray(getattr(features, "value", features), dtype=np.float64)
    Y = np.asarray(getattr(targets, "value", targets), dtype=np.float64)
    values = [x.copy() for x in params0.flat()]
    state = _opt_init(optimizer, values)
    slot_vals = state.slots
    for k in range(1, steps + 1):
        tape = Tape()
        Xt, Yt = tape.constant(X), tape.constant(Y)
        theta = [tape.variable(v) for v in values]
        slots = [[tape.constant(x) for x in slot] for slot in slot_vals]
        loss = squared_error(forward_tape(arch, theta, Xt), Yt)
        grads = ad.grad(loss, theta)
        theta, slots = _opt_step(optimizer, theta, grads, slots, k)
        values = [p.value for p in theta]
        slot_vals = [[x.value for x in slot] for slot in slots]
    return PolicyParams.from_flat(arch, values, params0.seed)
