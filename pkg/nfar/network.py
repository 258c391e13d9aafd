# nfar/network.py
"""Dense ReLU network psi_theta on (u1, u2, v1, v2, x), with backprop and Adam."""

import json

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .errors import NonFiniteOutputError, ShapeError


class MlpArchitecture(BaseModel):
    model_config = ConfigDict(frozen=True)

    input_dim: int = Field(5, ge=1)
    hidden: tuple[int, ...] = (32, 32, 32, 32, 32)
    output_dim: int = Field(1, ge=1)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden, self.output_dim]

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        """(n_in, n_out) of every affine layer A_1..A_{L+1}."""
        sizes = self.layer_sizes
        return list(zip(sizes[:-1], sizes[1:]))

    @property
    def n_params(self) -> int:
        return sum(n_in * n_out + n_out for n_in, n_out in self.layer_shapes)


class MlpParams(BaseModel):
    """Weights W_l of shape (n_in, n_out) and biases b_l of shape (n_out,); layer l maps h -> h @ W_l + b_l."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    arch: MlpArchitecture
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def to_vector(self) -> np.ndarray:
        """theta = (vec(W_1), b_1, ..., vec(W_{L+1}), b_{L+1}), weights flattened row-major."""
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts.append(W.ravel())
            parts.append(b)
        return np.concatenate(parts)

    @classmethod
    def from_vector(cls, arch: MlpArchitecture, theta: np.ndarray) -> "MlpParams":
        theta = np.asarray(theta, dtype=np.float64)
        if theta.size != arch.n_params:
            raise ShapeError(f"Parameter vector has {theta.size} entries; architecture needs {arch.n_params}.")
        weights, biases, pos = [], [], 0
        for n_in, n_out in arch.layer_shapes:
            weights.append(theta[pos:pos + n_in * n_out].reshape(n_in, n_out).copy())
            pos += n_in * n_out
            biases.append(theta[pos:pos + n_out].copy())
            pos += n_out
        return cls(arch=arch, weights=weights, biases=biases)

    @classmethod
    def zeros(cls, arch: MlpArchitecture) -> "MlpParams":
        return cls(arch=arch,
                   weights=[np.zeros((n_in, n_out)) for n_in, n_out in arch.layer_shapes],
                   biases=[np.zeros(n_out) for _, n_out in arch.layer_shapes])

    def tensors(self) -> list[np.ndarray]:
        """Flat list [W_1, b_1, W_2, b_2, ...] in layer order."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend([W, b])
        return out

    @classmethod
    def from_tensors(cls, arch: MlpArchitecture, tensors: list[np.ndarray]) -> "MlpParams":
        return cls(arch=arch, weights=list(tensors[0::2]), biases=list(tensors[1::2]))


def glorot_init(arch: MlpArchitecture, rng: np.random.Generator) -> MlpParams:
    """W_l entries uniform on [-sqrt(6/(n_in+n_out)), +sqrt(6/(n_in+n_out))]; biases zero."""
    weights, biases = [], []
    for n_in, n_out in arch.layer_shapes:
        bound = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return MlpParams(arch=arch, weights=weights, biases=biases)


def _check_batch(p: MlpParams, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != p.arch.input_dim:
        raise ShapeError(f"Expected a batch of shape (N, {p.arch.input_dim}), got {batch.shape}.")
    return batch


def forward_with_cache(p: MlpParams, batch: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """
    Output and the per-layer inputs needed by backprop.

    cache[l] is the input of affine layer l (the batch for l = 0, the
    post-ReLU activation otherwise); the final pre-activations are not cached.
    """
    h = _check_batch(p, batch)
    cache = []
    n_layers = len(p.weights)
    for l, (W, b) in enumerate(zip(p.weights, p.biases)):
        cache.append(h)
        h = h @ W + b
        if l < n_layers - 1:
            h = np.maximum(h, 0.0)
    if not np.all(np.isfinite(h)):
        raise NonFiniteOutputError("Network produced a non-finite output.")
    return h, cache


def forward(p: MlpParams, batch: np.ndarray) -> np.ndarray:
    """A_{L+1} o sigma o A_L o ... o sigma o A_1 applied row-wise; returns (N, output_dim)."""
    out, _ = forward_with_cache(p, batch)
    return out


def backward_from_output(p: MlpParams, cache: list[np.ndarray], grad_out: np.ndarray) -> MlpParams:
    """
    Reverse-mode pass for an arbitrary upstream gradient dLoss/dOutput.

    ReLU'(0) is taken as 0: a hidden unit passes gradient only where its
    cached activation is strictly positive.
    """
    n_layers = len(p.weights)
    grad_w = [None] * n_layers
    grad_b = [None] * n_layers
    delta = np.asarray(grad_out, dtype=np.float64)
    for l in range(n_layers - 1, -1, -1):
        h_in = cache[l]
        grad_w[l] = h_in.T @ delta
        grad_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ p.weights[l].T) * (h_in > 0)
    return MlpParams(arch=p.arch, weights=grad_w, biases=grad_b)


def mse_loss(p: MlpParams, batch: np.ndarray, targets: np.ndarray) -> float:
    pred = forward(p, batch)
    return float(np.mean((pred - np.asarray(targets).reshape(pred.shape)) ** 2))


def backward(p: MlpParams, batch: np.ndarray, targets: np.ndarray) -> MlpParams:
    """Gradient of (1/N) sum_n (psi(x_n) - y_n)^2 with respect to every weight and bias."""
    pred, cache = forward_with_cache(p, batch)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.size != pred.size:
        raise ShapeError(f"targets have {targets.size} entries for {pred.shape[0]} rows.")
    residual = pred - targets.reshape(pred.shape)
    return backward_from_output(p, cache, 2.0 * residual / pred.shape[0])


# --- Adam ---

class AdamState(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = Field(0, ge=0)
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: MlpParams, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        tensors = params.tensors()
        return cls(m=[np.zeros_like(x) for x in tensors], v=[np.zeros_like(x) for x in tensors],
                   t=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(state: AdamState, params: MlpParams, grads: MlpParams) -> tuple[MlpParams, AdamState]:
    """One bias-corrected Adam update; returns new params and state, inputs are left untouched."""
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    new_tensors, new_m, new_v = [], [], []
    for theta, g, m, v in zip(params.tensors(), grads.tensors(), state.m, state.v):
        if theta.shape != g.shape:
            raise ShapeError(f"Gradient shape {g.shape} does not match parameter shape {theta.shape}.")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / corr1
        v_hat = v / corr2
        new_tensors.append(theta - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    new_state = state.model_copy(update={'m': new_m, 'v': new_v, 't': t})
    return MlpParams.from_tensors(params.arch, new_tensors), new_state


# --- Checkpoints ---

def checkpoint_payload(params: MlpParams, seed: int | None = None, epoch: int | None = None,
                       adam: AdamState | None = None) -> dict:
    payload = {
        'arch': params.arch.model_dump(mode='json'),
        'weights': [W.tolist() for W in params.weights],
        'biases': [b.tolist() for b in params.biases],
        'seed': seed,
        'epoch': epoch,
    }
    if adam is not None:
        payload['adam_state'] = {
            'm': [x.tolist() for x in adam.m], 'v': [x.tolist() for x in adam.v], 't': adam.t,
            'lr': adam.lr, 'beta1': adam.beta1, 'beta2': adam.beta2, 'eps': adam.eps,
        }
    return payload


def dump_checkpoint(params: MlpParams, seed: int | None = None, epoch: int | None = None,
                    adam: AdamState | None = None) -> str:
    return json.dumps(checkpoint_payload(params, seed, epoch, adam), indent=1)


def load_checkpoint(text: str) -> tuple[MlpParams, dict]:
    """Params plus the remaining checkpoint metadata (seed, epoch, adam_state if any)."""
    payload = json.loads(text)
    arch = MlpArchitecture.model_validate(payload['arch'])
    params = MlpParams(arch=arch,
                       weights=[np.asarray(W, dtype=np.float64).reshape(shape)
                                for W, shape in zip(payload['weights'], arch.layer_shapes)],
                       biases=[np.asarray(b, dtype=np.float64) for b in payload['biases']])
    meta = {k: payload.get(k) for k in ('seed', 'epoch')}
    if 'adam_state' in payload:
        a = payload['adam_state']
        meta['adam_state'] = AdamState(m=[np.asarray(x) for x in a['m']], v=[np.asarray(x) for x in a['v']],
                                       t=a['t'], lr=a['lr'], beta1=a['beta1'], beta2=a['beta2'], eps=a['eps'])
    return params, meta
