"""Cross-dimension attention net (CDAN), numpy implementation with analytic gradients.

One CDAN level maps a sequence-like vector ``x`` (17 action or 24 isolation
coordinates) together with 64 expression coefficients ``beta`` to 64 new
coefficients:

* joint branch: the outer product ``J = x beta^T`` (L x 64) goes through a
  linear layer to ``J*``, then scaled dot-product self-attention over the L
  rows, mean-pooled to 64 values;
* flat branch: ``concat(x, beta)`` through one fully connected layer;
* fusion: both 64-vectors are concatenated and passed through a two-layer MLP.

Two levels run in series: ``beta' = level1(u, beta)`` then
``beta'' = level2(v, beta')``.

Every function works on batches (leading axis B); single vectors are
promoted and the batch axis is dropped again on return.
"""

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

from ._io import to_jsonable
from .au import N_AU
from .errors import BadLength, Diverged, NonFiniteActivation, SchemaMismatch, ShapeMismatch
from .space import N_ISO

N_COEFF = 64
LEVEL_LENGTHS = {"level1": N_AU, "level2": N_ISO}
SCHEMA_VERSION = 1
ACTIVATIONS = ("relu", "tanh")
COMBINE_AXES = ("embedding", "sequence")


@dataclass(frozen=True)
class CdanConfig:
    hidden: int = 128
    heads: int = 1
    activation: str = "relu"
    combine_axis: str = "embedding"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.combine_axis not in COMBINE_AXES:
            raise ValueError(f"combine_axis must be one of {COMBINE_AXES}")
        if self.heads < 1 or N_COEFF % self.heads:
            raise ValueError(f"heads must divide {N_COEFF}")
        if self.hidden < 1:
            raise ValueError("hidden must be positive")


@dataclass
class CdanParams:
    tensors: Dict[str, np.ndarray]
    seed: int
    config: CdanConfig = field(default_factory=CdanConfig)

    def __getitem__(self, name):
        return self.tensors[name]

    def copy(self) -> "CdanParams":
        return CdanParams({k: v.copy() for k, v in self.tensors.items()}, self.seed, self.config)

    def names(self, level=None):
        return [n for n in self.tensors if level is None or n.startswith(level + ".")]


def param_shapes(config: CdanConfig = CdanConfig()):
    shapes = {}
    for level, L in LEVEL_LENGTHS.items():
        c = N_COEFF if config.combine_axis == "embedding" else L
        shapes[f"{level}.combine.weight"] = (c, c)
        shapes[f"{level}.combine.bias"] = (c,)
        shapes[f"{level}.attn.q"] = (N_COEFF, N_COEFF)
        shapes[f"{level}.attn.k"] = (N_COEFF, N_COEFF)
        shapes[f"{level}.attn.v"] = (N_COEFF, N_COEFF)
        shapes[f"{level}.fc.weight"] = (L + N_COEFF, N_COEFF)
        shapes[f"{level}.fc.bias"] = (N_COEFF,)
        shapes[f"{level}.mlp.w1"] = (2 * N_COEFF, config.hidden)
        shapes[f"{level}.mlp.b1"] = (config.hidden,)
        shapes[f"{level}.mlp.w2"] = (config.hidden, N_COEFF)
        shapes[f"{level}.mlp.b2"] = (N_COEFF,)
    return shapes


def xavier_bound(shape):
    fan_in, fan_out = shape
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_params(seed: int, config: Optional[CdanConfig] = None) -> CdanParams:
    """Xavier-uniform weights, zero biases; deterministic in ``seed``."""
    config = config or CdanConfig()
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(config).items():
        if len(shape) == 2:
            b = xavier_bound(shape)
            tensors[name] = rng.uniform(-b, b, size=shape)
        else:
            tensors[name] = np.zeros(shape)
    return CdanParams(tensors, int(seed), config)


# -- building blocks -----------------------------------------------------------

def _act(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _act_grad(z, a, kind):
    return (z > 0).astype(z.dtype) if kind == "relu" else 1.0 - a * a


def softmax(s, axis=-1):
    s = s - s.max(axis=axis, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=axis, keepdims=True)


def combine_joint(x, beta, weight=None, bias=None, axis="embedding"):
    """Outer product ``J[i, m] = x_i * beta_m`` followed by a linear layer.

    With ``axis="embedding"`` the layer acts on each row (``J @ W + b``);
    with ``axis="sequence"`` it mixes the L rows instead. ``weight=None``
    means identity and ``bias=None`` zero.
    """
    x = np.asarray(x, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape[-1] != N_COEFF:
        raise BadLength(f"beta must have {N_COEFF} entries, got {beta.shape[-1]}")
    J = x[..., :, None] * beta[..., None, :]
    if weight is not None:
        if axis == "embedding":
            J = J @ weight
        else:
            J = np.swapaxes(np.swapaxes(J, -1, -2) @ weight, -1, -2)
    if bias is not None:
        J = J + (bias if axis == "embedding" else bias[:, None])
    return J


def _check_inputs(x, beta, level):
    L = LEVEL_LENGTHS[level]
    x = np.asarray(x, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if x.shape[-1] != L:
        raise BadLength(f"{level} expects a length-{L} vector, got length {x.shape[-1]}")
    if beta.shape[-1] != N_COEFF:
        raise BadLength(f"{level} expects {N_COEFF} coefficients, got {beta.shape[-1]}")
    single = x.ndim == 1
    x2, b2 = np.atleast_2d(x), np.atleast_2d(beta)
    if x2.shape[0] != b2.shape[0]:
        raise BadLength("batch sizes of x and beta differ")
    return x2, b2, single


def _level_forward(x, beta, params, level):
    """Batched forward of one level; returns the output and a cache for backprop."""
    cfg = params.config
    p = lambda name: params.tensors[f"{level}.{name}"]
    B, L = x.shape
    H, dh = cfg.heads, N_COEFF // cfg.heads

    Js = combine_joint(x, beta, p("combine.weight"), p("combine.bias"), cfg.combine_axis)
    Q, K, V = Js @ p("attn.q"), Js @ p("attn.k"), Js @ p("attn.v")
    split = lambda T: T.reshape(B, L, H, dh).transpose(0, 2, 1, 3)
    Qh, Kh, Vh = split(Q), split(K), split(V)
    A = softmax(Qh @ Kh.transpose(0, 1, 3, 2) / math.sqrt(dh))
    Hh = A @ Vh
    att = Hh.transpose(0, 2, 1, 3).reshape(B, L, N_COEFF).mean(axis=1)

    fc_in = np.concatenate([x, beta], axis=1)
    fc_pre = fc_in @ p("fc.weight") + p("fc.bias")
    fc = _act(fc_pre, cfg.activation)

    m_in = np.concatenate([att, fc], axis=1)
    h_pre = m_in @ p("mlp.w1") + p("mlp.b1")
    h = _act(h_pre, cfg.activation)
    out = h @ p("mlp.w2") + p("mlp.b2")
    if not np.all(np.isfinite(out)):
        raise NonFiniteActivation(f"{level} produced non-finite output")
    cache = dict(x=x, beta=beta, Js=Js, Qh=Qh, Kh=Kh, Vh=Vh, A=A,
                 fc_in=fc_in, fc_pre=fc_pre, fc=fc, m_in=m_in, h_pre=h_pre, h=h)
    return out, cache


def _level_backward(dout, cache, params, level):
    """Gradients of one level w.r.t. its parameters and both inputs."""
    cfg = params.config
    p = lambda name: params.tensors[f"{level}.{name}"]
    x, beta = cache["x"], cache["beta"]
    B, L = x.shape
    H, dh = cfg.heads, N_COEFF // cfg.heads
    g = {}

    g["mlp.w2"] = cache["h"].T @ dout
    g["mlp.b2"] = dout.sum(axis=0)
    dh_pre = (dout @ p("mlp.w2").T) * _act_grad(cache["h_pre"], cache["h"], cfg.activation)
    g["mlp.w1"] = cache["m_in"].T @ dh_pre
    g["mlp.b1"] = dh_pre.sum(axis=0)
    dm_in = dh_pre @ p("mlp.w1").T
    datt, dfc = dm_in[:, :N_COEFF], dm_in[:, N_COEFF:]

    dfc_pre = dfc * _act_grad(cache["fc_pre"], cache["fc"], cfg.activation)
    g["fc.weight"] = cache["fc_in"].T @ dfc_pre
    g["fc.bias"] = dfc_pre.sum(axis=0)
    dfc_in = dfc_pre @ p("fc.weight").T
    dx = dfc_in[:, :L].copy()
    dbeta = dfc_in[:, L:].copy()

    # mean pooling over the L rows
    dHh = np.broadcast_to((datt / L)[:, None, :], (B, L, N_COEFF)).reshape(B, L, H, dh).transpose(0, 2, 1, 3)
    A, Qh, Kh, Vh = cache["A"], cache["Qh"], cache["Kh"], cache["Vh"]
    dA = dHh @ Vh.transpose(0, 1, 3, 2)
    dVh = A.transpose(0, 1, 3, 2) @ dHh
    dS = A * (dA - np.sum(dA * A, axis=-1, keepdims=True)) / math.sqrt(dh)
    dQh = dS @ Kh
    dKh = dS.transpose(0, 1, 3, 2) @ Qh
    merge = lambda T: T.transpose(0, 2, 1, 3).reshape(B, L, N_COEFF)
    dQ, dK, dV = merge(dQh), merge(dKh), merge(dVh)

    Js = cache["Js"]
    g["attn.q"] = np.einsum("blm,bln->mn", Js, dQ)
    g["attn.k"] = np.einsum("blm,bln->mn", Js, dK)
    g["attn.v"] = np.einsum("blm,bln->mn", Js, dV)
    dJs = dQ @ p("attn.q").T + dK @ p("attn.k").T + dV @ p("attn.v").T

    J = x[:, :, None] * beta[:, None, :]
    W = p("combine.weight")
    if cfg.combine_axis == "embedding":
        g["combine.weight"] = np.einsum("blj,blm->jm", J, dJs)
        g["combine.bias"] = dJs.sum(axis=(0, 1))
        dJ = dJs @ W.T
    else:
        g["combine.weight"] = np.einsum("blj,bmj->lm", J, dJs)
        g["combine.bias"] = dJs.sum(axis=(0, 2))
        dJ = np.einsum("lm,bmj->blj", W, dJs)
    dx += np.einsum("blj,bj->bl", dJ, beta)
    dbeta += np.einsum("blj,bl->bj", dJ, x)
    return {f"{level}.{k}": v for k, v in g.items()}, dx, dbeta


def attention_weights(x, beta, params, level="level1"):
    """Softmax attention matrices of one level, shape (B, heads, L, L) or (heads, L, L)."""
    x2, b2, single = _check_inputs(x, beta, level)
    _, cache = _level_forward(x2, b2, params, level)
    return cache["A"][0] if single else cache["A"]


def forward_level1(u, beta, params):
    """``beta' = level1(u, beta)`` for a 17-vector (or batch) ``u``."""
    x, b, single = _check_inputs(u, beta, "level1")
    out, _ = _level_forward(x, b, params, "level1")
    return out[0] if single else out


def forward_level2(v, beta_prime, params):
    """``beta'' = level2(v, beta')`` for a 24-vector (or batch) ``v``."""
    x, b, single = _check_inputs(v, beta_prime, "level2")
    out, _ = _level_forward(x, b, params, "level2")
    return out[0] if single else out


def infer(u, v, beta, params):
    """Serial two-level prediction of the final expression coefficients."""
    return forward_level2(v, forward_level1(u, beta, params), params)


# -- losses and gradients -------------------------------------------------------

STAGES = ("level1", "level2", "serial")


def loss_and_grads(params, u, v, beta, target, stage="serial", reduction="sum"):
    """Squared-error loss and its gradients for the chosen stage.

    ``level1``: ``||level1(u, beta) - target||^2``; ``level2``:
    ``||level2(v, beta) - target||^2``; ``serial``: the two levels chained.
    ``reduction="mean"`` divides by the number of output elements (MSE).
    Only the parameters of the levels involved get gradients.
    """
    if stage not in STAGES:
        raise ValueError(f"stage must be one of {STAGES}")
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if stage == "level1":
        x, b, _ = _check_inputs(u, beta, "level1")
        out, c1 = _level_forward(x, b, params, "level1")
    elif stage == "level2":
        x, b, _ = _check_inputs(v, beta, "level2")
        out, c2 = _level_forward(x, b, params, "level2")
    else:
        x1, b1, _ = _check_inputs(u, beta, "level1")
        mid, c1 = _level_forward(x1, b1, params, "level1")
        x2, b2, _ = _check_inputs(v, mid, "level2")
        out, c2 = _level_forward(x2, b2, params, "level2")
    if out.shape != target.shape:
        raise BadLength(f"target shape {target.shape} does not match output {out.shape}")
    diff = out - target
    scale = 1.0 / diff.size if reduction == "mean" else 1.0
    loss = float(np.sum(diff * diff) * scale)
    dout = 2.0 * diff * scale
    grads = {}
    if stage == "level1":
        grads.update(_level_backward(dout, c1, params, "level1")[0])
    elif stage == "level2":
        grads.update(_level_backward(dout, c2, params, "level2")[0])
    else:
        g2, _, dmid = _level_backward(dout, c2, params, "level2")
        g1, _, _ = _level_backward(dmid, c1, params, "level1")
        grads.update(g1)
        grads.update(g2)
    return loss, grads


def _stage_output(params, u, v, beta, stage):
    """Output of a stage plus the on/off pattern of every ReLU unit it passed through."""
    relu = params.config.activation == "relu"
    patterns = []

    def run(x, b, level):
        x2, b2, _ = _check_inputs(x, b, level)
        out, cache = _level_forward(x2, b2, params, level)
        if relu:
            patterns.extend([cache["fc_pre"] > 0, cache["h_pre"] > 0])
        return out

    if stage == "level1":
        out = run(u, beta, "level1")
    elif stage == "level2":
        out = run(v, beta, "level2")
    else:
        out = run(v, run(u, beta, "level1"), "level2")
    return out, patterns


def _loss_delta(out_plus, out_minus, target):
    """``L(out_plus) - L(out_minus)`` for the squared error, without subtracting two full losses.

    ``a^2 - b^2 = (a - b)(a + b)`` keeps the cancellation at the scale of the
    outputs instead of the (much larger) loss.
    """
    return float(np.sum((out_plus - out_minus) * (out_plus + out_minus - 2.0 * target)))


@dataclass
class GradCheckResult:
    max_rel_err: float
    passed: bool
    n_checked: int
    worst: Optional[str] = None
    n_kinks: int = 0    # entries skipped because +-epsilon straddled a ReLU kink


def grad_check(params, u, v, beta, target, epsilon=3e-4, stage="serial", n_samples=200,
               seed=0, tolerance=1e-4, grads=None) -> GradCheckResult:
    """Compare analytic gradients with central finite differences.

    At least ``n_samples`` parameter entries are checked, spread evenly over
    every tensor the stage touches. Relative error is
    ``|a - f| / max(|a|, |f|, 1e-8)``. ``grads`` overrides the analytic
    gradients (useful for mutation tests).

    Entries whose two perturbations leave some ReLU unit on different sides
    of zero are skipped and counted, since the difference quotient then
    spans a kink. The loss difference is formed from the outputs directly,
    which keeps roundoff well below the tolerance at the default step.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-7, 1e-3]")
    if grads is None:
        _, grads = loss_and_grads(params, u, v, beta, target, stage)
    names = sorted(grads)
    per = math.ceil(n_samples / len(names))
    rng = np.random.default_rng(seed)
    work = params.copy()
    tgt = np.atleast_2d(np.asarray(target, dtype=np.float64))
    worst, max_err, count, kinks = None, 0.0, 0, 0
    for name in names:
        T = work.tensors[name]
        flat = T.reshape(-1)
        picks = rng.choice(flat.size, size=min(per, flat.size), replace=False)
        for idx in picks:
            orig = flat[idx]
            flat[idx] = orig + epsilon
            op, pp = _stage_output(work, u, v, beta, stage)
            flat[idx] = orig - epsilon
            om, pm = _stage_output(work, u, v, beta, stage)
            flat[idx] = orig
            if any(not np.array_equal(a, b) for a, b in zip(pp, pm)):
                kinks += 1
                continue
            fd = _loss_delta(op, om, tgt) / (2 * epsilon)
            an = float(grads[name].reshape(-1)[idx])
            err = abs(an - fd) / max(abs(an), abs(fd), 1e-8)
            count += 1
            if err > max_err:
                max_err, worst = err, f"{name}[{np.unravel_index(idx, T.shape)}]"
    return GradCheckResult(max_err, count > 0 and max_err < tolerance, count, worst, kinks)


# -- training ---------------------------------------------------------------------

@dataclass
class TrainLog:
    stage: str
    initial_loss: float
    epoch_loss: List[float] = field(default_factory=list)       # full-data MSE after each epoch
    batch_loss_mean: List[float] = field(default_factory=list)  # mean minibatch MSE during each epoch
    lr: List[float] = field(default_factory=list)


def as_arrays(dataset):
    """Stack a list of ``(u, v, beta, target)`` tuples into four arrays."""
    if isinstance(dataset, dict):
        return tuple(np.asarray(dataset[k], dtype=np.float64) for k in ("u", "v", "beta", "target"))
    if not len(dataset):
        raise ValueError("dataset is empty")
    cols = list(zip(*dataset))
    return tuple(np.stack([np.asarray(c, dtype=np.float64) for c in col]) for col in cols)


def epoch_lr(lr, decay, epoch):
    return lr * decay ** epoch


class Adam:
    def __init__(self, names, shapes, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = {n: np.zeros(shapes[n]) for n in names}
        self.v = {n: np.zeros(shapes[n]) for n in names}
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, tensors, grads, lr):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for n in self.m:
            g = grads[n]
            self.m[n] = self.b1 * self.m[n] + (1 - self.b1) * g
            self.v[n] = self.b2 * self.v[n] + (1 - self.b2) * g * g
            tensors[n] -= lr * (self.m[n] / c1) / (np.sqrt(self.v[n] / c2) + self.eps)


def _train_stage(params, arrays, stage, epochs, lr, decay, batch, rng):
    U, V, Bt, T = arrays
    loss_stage = "level1" if stage == "coarse" else "serial"
    level = "level1" if stage == "coarse" else "level2"
    names = params.names(level)
    opt = Adam(names, {n: params.tensors[n].shape for n in names})
    full = lambda: loss_and_grads(params, U, V, Bt, T, loss_stage, "mean")[0]
    log = TrainLog(stage, full())
    n = len(U)
    for epoch in range(epochs):
        rate = epoch_lr(lr, decay, epoch)
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            loss, grads = loss_and_grads(params, U[idx], V[idx], Bt[idx], T[idx], loss_stage, "mean")
            if not math.isfinite(loss):
                raise Diverged(f"loss became non-finite in epoch {epoch}")
            losses.append(loss)
            opt.step(params.tensors, grads, rate)
        epoch_loss = full()
        if not math.isfinite(epoch_loss):
            raise Diverged(f"loss became non-finite in epoch {epoch}")
        log.lr.append(rate)
        log.batch_loss_mean.append(float(np.mean(losses)))
        log.epoch_loss.append(epoch_loss)
    return log


def train_toy(dataset, params, epochs=30, lr=1e-4, decay=0.86, batch=10, stage="two-step", seed=0):
    """Mini-batch Adam on mean-squared error with learning rate ``lr * decay**epoch``.

    ``stage`` selects what is trained: ``coarse`` fits level 1 alone to the
    targets; ``fine`` freezes level 1 and fits level 2 on the serial output;
    ``two-step`` runs coarse then fine, ``epochs`` each. Returns the updated
    parameters (the input is not modified) and one :class:`TrainLog` per stage.
    """
    if stage not in ("coarse", "fine", "two-step"):
        raise ValueError("stage must be 'coarse', 'fine' or 'two-step'")
    arrays = as_arrays(dataset)
    if not len(arrays[0]):
        raise ValueError("dataset is empty")
    params = params.copy()
    rng = np.random.default_rng(params.seed if seed is None else seed)
    stages = ["coarse", "fine"] if stage == "two-step" else [stage]
    logs = [_train_stage(params, arrays, s, epochs, lr, decay, batch, rng) for s in stages]
    return params, logs


def linear_fixture(n=200, seed=0, scale=1.0):
    """Synthetic dataset whose targets are an affine function of ``u``: ``target = A u + c``."""
    rng = np.random.default_rng(seed)
    A = rng.normal(0.0, scale / math.sqrt(N_AU), size=(N_COEFF, N_AU))
    c = rng.normal(0.0, 0.1 * scale, size=N_COEFF)
    U = rng.normal(size=(n, N_AU))
    mags = np.abs(rng.normal(size=(n, N_AU)))
    V = np.zeros((n, N_ISO))
    V[:, :N_AU] = mags
    V[np.arange(n), N_AU + rng.integers(0, N_ISO - N_AU, size=n)] = np.sqrt(np.sum(mags ** 2, axis=1))
    Bt = rng.normal(0.0, 0.5, size=(n, N_COEFF))
    T = U @ A.T + c
    return [(U[i], V[i], Bt[i], T[i]) for i in range(n)]


# -- persistence -------------------------------------------------------------------

def save_params(params: CdanParams) -> bytes:
    """Versioned JSON container: schema version, seed, config, and each tensor's shape and data."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "cdan_params",
        "seed": params.seed,
        "config": asdict(params.config),
        "tensors": [
            {"name": n, "shape": list(params.tensors[n].shape), "data": params.tensors[n].reshape(-1).tolist()}
            for n in sorted(params.tensors)
        ],
    }
    return (json.dumps(to_jsonable(doc), separators=(",", ":")) + "\n").encode("utf-8")


def load_params(data) -> CdanParams:
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SchemaMismatch(f"cannot parse params file: {exc}") from None
    if not isinstance(doc, dict) or doc.get("kind") != "cdan_params":
        raise SchemaMismatch("not a CDAN params document")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise SchemaMismatch(f"unsupported schema_version {doc.get('schema_version')!r}")
    try:
        config = CdanConfig(**doc["config"])
        seed = int(doc["seed"])
        entries = {t["name"]: t for t in doc["tensors"]}
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaMismatch(f"malformed params document: {exc}") from None
    expected = param_shapes(config)
    if set(entries) != set(expected):
        missing = sorted(set(expected) - set(entries))
        extra = sorted(set(entries) - set(expected))
        raise SchemaMismatch(f"tensor set mismatch (missing {missing}, unexpected {extra})")
    tensors = {}
    for name, shape in expected.items():
        entry = entries[name]
        declared = tuple(entry.get("shape", ()))
        if declared != shape:
            raise ShapeMismatch(f"{name}: declared shape {declared}, expected {shape}")
        arr = np.asarray(entry.get("data", []), dtype=np.float64)
        if arr.size != math.prod(shape):
            raise ShapeMismatch(f"{name}: {arr.size} values for shape {shape}")
        if not np.all(np.isfinite(arr)):
            raise SchemaMismatch(f"{name}: non-finite values")
        tensors[name] = arr.reshape(shape)
    return CdanParams(tensors, seed, config)
