"""Graph neural networks built from filter banks, trained by hand-rolled ADAM.

A GNN layer diffuses the feature matrix through the shift, mixes the powers
with an F_in x F_out tap matrix per power, and applies a pointwise
nonlinearity. The optional readout maps the final features to one value per
node, so losses can be evaluated at a single target node. Gradients are
computed by reverse mode on the exact forward arithmetic — no autograd
library anywhere.

Dense baselines (an unconstrained linear map and a small MLP) share the
training loop so the recommendation experiments compare like for like.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .filters import diffusion_stack
from .graph import ShiftOperator
from .numerics import Rng

__all__ = [
    "GnnArchitecture",
    "GnnParameters",
    "DenseArchitecture",
    "DenseParameters",
    "LossKind",
    "TrainConfig",
    "TrainResult",
    "init_parameters",
    "param_count",
    "gnn_forward",
    "gnn_backward",
    "dense_forward",
    "dense_backward",
    "model_forward",
    "loss_and_grad",
    "predict",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "save_loss_csv",
]


_NONLINEARITIES = {
    "relu": (lambda u: np.maximum(u, 0.0), lambda u: (u > 0.0).astype(np.float64)),
    "tanh": (np.tanh, lambda u: 1.0 - np.tanh(u) ** 2),
    "identity": (lambda u: u, lambda u: np.ones_like(u)),
}


def _nonlinearity(name):
    try:
        return _NONLINEARITIES[name]
    except KeyError:
        raise ValueError(f"unknown nonlinearity {name!r}") from None


@dataclass(frozen=True)
class GnnArchitecture:
    """Layer widths (F_0, ..., F_L), filter degrees (K_1, ..., K_L)."""

    features: tuple
    degrees: tuple
    nonlinearity: str = "relu"
    readout: bool = True

    def __post_init__(self):
        if len(self.features) < 2 or len(self.degrees) != len(self.features) - 1:
            raise ValueError("need features (F_0..F_L) and one degree per layer")
        if any(f < 1 for f in self.features) or any(k < 0 for k in self.degrees):
            raise ValueError("invalid widths or degrees")
        _nonlinearity(self.nonlinearity)
        object.__setattr__(self, "features", tuple(int(f) for f in self.features))
        object.__setattr__(self, "degrees", tuple(int(k) for k in self.degrees))

    @property
    def layers(self):
        return len(self.degrees)


@dataclass
class GnnParameters:
    banks: list                 # per layer: (K_l+1, F_{l-1}, F_l)
    readout: np.ndarray | None  # (F_L,) or None

    def copy(self):
        return GnnParameters(
            banks=[b.copy() for b in self.banks],
            readout=None if self.readout is None else self.readout.copy(),
        )


@dataclass(frozen=True)
class DenseArchitecture:
    """Fully connected baseline: sizes (n, ..., n); hidden layers nonlinear."""

    sizes: tuple
    nonlinearity: str = "relu"

    def __post_init__(self):
        if len(self.sizes) < 2 or any(s < 1 for s in self.sizes):
            raise ValueError("need at least input and output sizes")
        _nonlinearity(self.nonlinearity)
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))


@dataclass
class DenseParameters:
    weights: list  # per layer: (in, out)

    def copy(self):
        return DenseParameters(weights=[w.copy() for w in self.weights])


def init_parameters(arch, rng: Rng):
    """Uniform init in +/- 1/sqrt(fan_in); fan_in of a bank is F_in*(K+1)."""
    if isinstance(arch, GnnArchitecture):
        banks = []
        for layer in range(arch.layers):
            f_in, f_out = arch.features[layer], arch.features[layer + 1]
            taps = arch.degrees[layer] + 1
            scale = 1.0 / np.sqrt(f_in * taps)
            banks.append(rng.uniform(-scale, scale, size=(taps, f_in, f_out)))
        readout = None
        if arch.readout:
            f_last = arch.features[-1]
            readout = rng.uniform(-1.0 / np.sqrt(f_last), 1.0 / np.sqrt(f_last), size=f_last)
        return GnnParameters(banks=banks, readout=readout)
    if isinstance(arch, DenseArchitecture):
        weights = []
        for f_in, f_out in zip(arch.sizes[:-1], arch.sizes[1:]):
            scale = 1.0 / np.sqrt(f_in)
            weights.append(rng.uniform(-scale, scale, size=(f_in, f_out)))
        return DenseParameters(weights=weights)
    raise TypeError(f"unsupported architecture {type(arch).__name__}")


def param_count(arch):
    if isinstance(arch, GnnArchitecture):
        total = sum(
            (k + 1) * f_in * f_out
            for k, f_in, f_out in zip(arch.degrees, arch.features[:-1], arch.features[1:])
        )
        return total + (arch.features[-1] if arch.readout else 0)
    if isinstance(arch, DenseArchitecture):
        return sum(a * b for a, b in zip(arch.sizes[:-1], arch.sizes[1:]))
    raise TypeError(f"unsupported architecture {type(arch).__name__}")


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

@dataclass
class GnnTape:
    x0: np.ndarray
    stacks: list = field(default_factory=list)    # per layer (K+1, ..., n, F_in)
    preacts: list = field(default_factory=list)   # per layer (..., n, F_out)
    features: np.ndarray | None = None            # X_L


def _gnn_features(arch, x):
    """Normalize input to (..., n, F_0); remember if it was a bare vector."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        if arch.features[0] != 1:
            raise ValueError("vector input requires a single input feature")
        return arr[:, None]
    if arr.ndim in (2, 3):
        if arr.shape[-1] != arch.features[0]:
            raise ValueError(
                f"input has {arr.shape[-1]} features, architecture expects {arch.features[0]}"
            )
        return arr
    raise ValueError("input must be (n,), (n, F0) or (batch, n, F0)")


def gnn_forward(arch, params, shift, x, with_tape=False):
    """Run the GNN; returns per-node outputs (readout) or final features.

    x: (n,), (n, F0), or batched (B, n, F0). With a readout the output is
    (n,) respectively (B, n); without it, features (..., n, F_L). The tape
    (needed for gradients) stores each layer's diffusion stack; the plain
    forward accumulates incrementally and keeps memory at one feature map.
    """
    sigma, _ = _nonlinearity(arch.nonlinearity)
    s = shift.matrix if isinstance(shift, ShiftOperator) else np.asarray(shift, dtype=np.float64)
    feats = _gnn_features(arch, x)
    tape = GnnTape(x0=feats)
    for layer in range(arch.layers):
        bank = params.banks[layer]
        if with_tape:
            stack = diffusion_stack(s, arch.degrees[layer], feats)
            pre = np.einsum("k...nf,kfg->...ng", stack, bank, optimize=True)
            tape.stacks.append(stack)
            tape.preacts.append(pre)
        else:
            z = feats
            pre = z @ bank[0]
            for k in range(1, bank.shape[0]):
                z = s @ z
                pre = pre + z @ bank[k]
        feats = sigma(pre)
    tape.features = feats
    out = feats if params.readout is None else feats @ params.readout
    return (out, tape) if with_tape else out


def gnn_backward(arch, params, shift, tape, dout):
    """Gradients of a scalar objective given d(objective)/d(output).

    dout matches the forward output shape. Returns a GnnParameters holding
    the gradients (same shapes as the parameters).
    """
    _, dsigma = _nonlinearity(arch.nonlinearity)
    s = shift.matrix if isinstance(shift, ShiftOperator) else np.asarray(shift, dtype=np.float64)
    if params.readout is not None:
        dout_arr = np.asarray(dout, dtype=np.float64)
        grad_readout = np.einsum("...n,...nf->f", dout_arr, tape.features, optimize=True)
        dfeat = dout_arr[..., None] * params.readout
    else:
        grad_readout = None
        dfeat = np.asarray(dout, dtype=np.float64)
    grad_banks = [None] * arch.layers
    for layer in range(arch.layers - 1, -1, -1):
        dpre = dfeat * dsigma(tape.preacts[layer])
        stack = tape.stacks[layer]
        grad_banks[layer] = np.einsum("k...nf,...ng->kfg", stack, dpre, optimize=True)
        if layer > 0:
            bank = params.banks[layer]
            carried = dpre @ bank[-1].T
            for k in range(bank.shape[0] - 2, -1, -1):
                carried = s @ carried + dpre @ bank[k].T
            dfeat = carried
    return GnnParameters(banks=grad_banks, readout=grad_readout)


def dense_forward(arch, params, x, with_tape=False):
    """MLP forward; hidden layers nonlinear, final layer linear.

    x: (n,) or batched (B, n); output has the same leading shape with the
    final size as last axis.
    """
    sigma, _ = _nonlinearity(arch.nonlinearity)
    h = np.asarray(x, dtype=np.float64)
    preacts, acts = [], [h]
    for w in params.weights[:-1]:
        pre = h @ w
        h = sigma(pre)
        preacts.append(pre)
        acts.append(h)
    out = h @ params.weights[-1]
    if with_tape:
        return out, (preacts, acts)
    return out


def dense_backward(arch, params, tape, dout):
    _, dsigma = _nonlinearity(arch.nonlinearity)
    preacts, acts = tape
    dout_arr = np.asarray(dout, dtype=np.float64)
    grads = [None] * len(params.weights)
    grads[-1] = np.einsum("...i,...j->ij", acts[-1], dout_arr, optimize=True)
    dh = dout_arr @ params.weights[-1].T
    for layer in range(len(params.weights) - 2, -1, -1):
        dpre = dh * dsigma(preacts[layer])
        grads[layer] = np.einsum("...i,...j->ij", acts[layer], dpre, optimize=True)
        if layer > 0:
            dh = dpre @ params.weights[layer].T
    return DenseParameters(weights=grads)


def model_forward(arch, params, shift, x, with_tape=False):
    """Architecture-dispatched forward shared by training and evaluation."""
    if isinstance(arch, GnnArchitecture):
        return gnn_forward(arch, params, shift, x, with_tape=with_tape)
    if isinstance(arch, DenseArchitecture):
        return dense_forward(arch, params, x, with_tape=with_tape)
    raise TypeError(f"unsupported architecture {type(arch).__name__}")


def predict(arch, params, shift, x):
    return model_forward(arch, params, shift, x)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

class LossKind(Enum):
    L1_READOUT = "l1_readout"
    MSE_READOUT = "mse_readout"
    MSE_FULL = "mse_full"


def loss_and_grad(output, node, target, kind):
    """Loss and d(loss)/d(output) for one sample's per-node output vector.

    Readout losses look at output[node] only: L1 is |err| with subgradient 0
    at the kink; MSE is err^2 / 2 (prediction 3 against target 5 scores 2).
    MSE_FULL compares the whole vector to a target vector.
    """
    out = np.asarray(output, dtype=np.float64)
    grad = np.zeros_like(out)
    if kind == LossKind.MSE_FULL:
        err = out - np.asarray(target, dtype=np.float64)
        return 0.5 * float(np.sum(err * err)), err
    err = float(out[node]) - float(target)
    if kind == LossKind.L1_READOUT:
        grad[node] = 0.0 if err == 0.0 else (1.0 if err > 0.0 else -1.0)
        return abs(err), grad
    if kind == LossKind.MSE_READOUT:
        grad[node] = err
        return 0.5 * err * err, grad
    raise ValueError(f"unknown loss kind {kind!r}")


def _batch_loss_and_grad(outputs, nodes, targets, kind):
    """Mean loss over a batch of per-node output vectors, and its gradient."""
    b = outputs.shape[0]
    grad = np.zeros_like(outputs)
    if kind == LossKind.MSE_FULL:
        err = outputs - targets
        loss = 0.5 * float(np.sum(err * err)) / b
        return loss, err / b
    rows = np.arange(b)
    err = outputs[rows, nodes] - targets
    if kind == LossKind.L1_READOUT:
        loss = float(np.mean(np.abs(err)))
        grad[rows, nodes] = np.sign(err) / b
        return loss, grad
    if kind == LossKind.MSE_READOUT:
        loss = 0.5 * float(np.mean(err * err))
        grad[rows, nodes] = err / b
        return loss, grad
    raise ValueError(f"unknown loss kind {kind!r}")


# ---------------------------------------------------------------------------
# ADAM + training loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 5
    learning_rate: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    loss: LossKind = LossKind.L1_READOUT


@dataclass
class TrainResult:
    params: object          # parameters after the final epoch
    best_params: object     # parameters at the best validation epoch
    best_epoch: int
    history: list           # rows (epoch, train_loss, val_loss)


def _param_arrays(params):
    if isinstance(params, GnnParameters):
        arrays = list(params.banks)
        if params.readout is not None:
            arrays.append(params.readout)
        return arrays
    return list(params.weights)


class _Adam:
    def __init__(self, arrays, cfg: TrainConfig):
        self.cfg = cfg
        self.step_count = 0
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]

    def step(self, arrays, grads):
        cfg = self.cfg
        self.step_count += 1
        t = self.step_count
        for i, (a, g) in enumerate(zip(arrays, grads)):
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * (g * g)
            m_hat = self.m[i] / (1.0 - cfg.beta1**t)
            v_hat = self.v[i] / (1.0 - cfg.beta2**t)
            a -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def _stack_inputs(arch, dataset, indices):
    xs = np.stack([np.asarray(dataset[i][0], dtype=np.float64) for i in indices])
    if isinstance(arch, GnnArchitecture) and xs.ndim == 2:
        xs = xs[:, :, None]
    return xs


def _eval_rmse(arch, params, shift, dataset, kind, chunk=64):
    """Validation metric: RMSE of readout predictions (or full vectors)."""
    if not dataset:
        return float("nan")
    sq_sum, count = 0.0, 0
    for start in range(0, len(dataset), chunk):
        indices = range(start, min(start + chunk, len(dataset)))
        xs = _stack_inputs(arch, dataset, indices)
        outputs = model_forward(arch, params, shift, xs)
        if kind == LossKind.MSE_FULL:
            targets = np.stack([np.asarray(dataset[i][2], dtype=np.float64) for i in indices])
            err = outputs - targets
            sq_sum += float(np.sum(err * err))
            count += err.size
        else:
            nodes = np.asarray([dataset[i][1] for i in indices], dtype=np.intp)
            targets = np.asarray([dataset[i][2] for i in indices], dtype=np.float64)
            err = outputs[np.arange(len(nodes)), nodes] - targets
            sq_sum += float(np.sum(err * err))
            count += err.size
    return float(np.sqrt(sq_sum / count))


def train(arch, shift, dataset, cfg: TrainConfig, rng: Rng, val_dataset=None):
    """Minibatch ADAM on the empirical risk; deterministic per (rng, config).

    dataset: sequence of (x, node, target) samples. Returns final and
    best-validation parameters plus per-epoch history rows
    (epoch, train_loss, val_loss) where val_loss is the validation RMSE
    (nan when no validation set is supplied, in which case best = final).
    """
    if not dataset:
        raise ValueError("empty training set")
    params = init_parameters(arch, rng)
    arrays = _param_arrays(params)
    adam = _Adam(arrays, cfg)
    is_gnn = isinstance(arch, GnnArchitecture)
    if cfg.loss == LossKind.MSE_FULL:
        nodes_all = np.zeros(len(dataset), dtype=np.intp)  # unused by this loss
        targets_all = np.stack([np.asarray(d[2], dtype=np.float64) for d in dataset])
    else:
        nodes_all = np.asarray([d[1] for d in dataset], dtype=np.intp)
        targets_all = np.asarray([d[2] for d in dataset], dtype=np.float64)

    history = []
    best_epoch, best_val, best_params = 0, float("inf"), params.copy()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(dataset))
        total_loss = 0.0
        for start in range(0, len(dataset), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            xs = _stack_inputs(arch, dataset, batch)
            outputs, tape = model_forward(arch, params, shift, xs, with_tape=True)
            loss, dout = _batch_loss_and_grad(
                outputs, nodes_all[batch], targets_all[batch], cfg.loss
            )
            total_loss += loss * batch.size
            if is_gnn:
                grads = gnn_backward(arch, params, shift, tape, dout)
            else:
                grads = dense_backward(arch, params, tape, dout)
            adam.step(arrays, _param_arrays(grads))
        train_loss = total_loss / len(dataset)
        val_loss = _eval_rmse(arch, params, shift, val_dataset or [], cfg.loss)
        history.append((epoch, train_loss, val_loss))
        if val_dataset and val_loss < best_val:
            best_epoch, best_val, best_params = epoch, val_loss, params.copy()
    if not val_dataset:
        best_epoch, best_params = cfg.epochs, params.copy()
    return TrainResult(params=params, best_params=best_params, best_epoch=best_epoch, history=history)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_checkpoint(path, arch, params, epoch=0, seed=None):
    """JSON checkpoint; floats survive the round trip exactly (repr digits)."""
    if isinstance(arch, GnnArchitecture):
        payload = {
            "kind": "gnn",
            "architecture": {
                "features": list(arch.features),
                "degrees": list(arch.degrees),
                "nonlinearity": arch.nonlinearity,
                "readout": arch.readout,
            },
            "banks": [b.tolist() for b in params.banks],
            "readout": None if params.readout is None else params.readout.tolist(),
            "epoch": int(epoch),
            "seed": None if seed is None else int(seed),
        }
    elif isinstance(arch, DenseArchitecture):
        payload = {
            "kind": "dense",
            "architecture": {"sizes": list(arch.sizes), "nonlinearity": arch.nonlinearity},
            "weights": [w.tolist() for w in params.weights],
            "epoch": int(epoch),
            "seed": None if seed is None else int(seed),
        }
    else:
        raise TypeError(f"unsupported architecture {type(arch).__name__}")
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path):
    with open(path) as fh:
        payload = json.load(fh)
    if payload["kind"] == "gnn":
        spec = payload["architecture"]
        arch = GnnArchitecture(
            features=tuple(spec["features"]),
            degrees=tuple(spec["degrees"]),
            nonlinearity=spec["nonlinearity"],
            readout=spec["readout"],
        )
        params = GnnParameters(
            banks=[np.asarray(b, dtype=np.float64) for b in payload["banks"]],
            readout=None
            if payload["readout"] is None
            else np.asarray(payload["readout"], dtype=np.float64),
        )
    elif payload["kind"] == "dense":
        spec = payload["architecture"]
        arch = DenseArchitecture(sizes=tuple(spec["sizes"]), nonlinearity=spec["nonlinearity"])
        params = DenseParameters(
            weights=[np.asarray(w, dtype=np.float64) for w in payload["weights"]]
        )
    else:
        raise ValueError(f"unknown checkpoint kind {payload.get('kind')!r}")
    return arch, params, payload.get("epoch", 0), payload.get("seed")


def save_loss_csv(path, history):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for epoch, train_loss, val_loss in history:
            writer.writerow([epoch, repr(float(train_loss)), repr(float(val_loss))])
