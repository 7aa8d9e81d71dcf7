"""Stacked GRU encoder with global attention, trained by in-repo backprop.

The encoder runs a stack of GRU layers over the onset-indexed feature
matrix; a global attention layer (query = final valid hidden state) pools
the top-layer states; (context, last) is layer-normalized and fed through
two fully connected layers into a softmax. Gradients are reverse-mode,
written out by hand and verified against central finite differences.

Padding is handled by carrying the hidden state through masked steps and
masking attention scores, so predictions are invariant to trailing pads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from .errors import DataError, ParseError, TrainingError

FULL_WIDTHS = (512, 512, 256, 256, 128)
DESK_WIDTHS = (64, 64, 32, 32, 16)
LN_EPS = 1e-5


@dataclass
class GruNetConfig:
    layer_widths: tuple = FULL_WIDTHS
    fc_width: int = 256
    classes: int = 3
    dropout: float = 0.0
    epochs: int = 20
    lr: float = 0.002
    batch: int = 64
    seed: int = 0

    def __post_init__(self):
        self.layer_widths = tuple(int(w) for w in self.layer_widths)
        if any(w <= 0 for w in self.layer_widths) or self.classes != 3:
            raise DataError("widths must be positive and classes must be 3")
        if not 0.0 <= self.dropout < 1.0:
            raise DataError("dropout must be in [0, 1)")

    @classmethod
    def desk(cls, **overrides) -> "GruNetConfig":
        """CPU-friendly profile used by tests and the desk CLI profile."""
        kwargs = {"layer_widths": DESK_WIDTHS, "fc_width": 32, "batch": 16}
        kwargs.update(overrides)
        return cls(**kwargs)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def init_params(config: GruNetConfig, input_width: int) -> dict[str, np.ndarray]:
    """Uniform +-1/sqrt(fan_in) initialization from a seeded generator."""
    rng = np.random.default_rng(config.seed)

    def uni(fan_in, shape):
        bound = 1.0 / np.sqrt(max(fan_in, 1))
        return rng.uniform(-bound, bound, size=shape)

    params: dict[str, np.ndarray] = {}
    d_in = input_width
    for l, width in enumerate(config.layer_widths):
        for gate in ("z", "r", "h"):
            params[f"l{l}_W{gate}"] = uni(d_in, (d_in, width))
            params[f"l{l}_U{gate}"] = uni(width, (width, width))
            params[f"l{l}_b{gate}"] = np.zeros(width)
        d_in = width
    d = config.layer_widths[-1]
    params["attn_P"] = uni(d, (d, d))
    params["ln_gamma"] = np.ones(2 * d)
    params["ln_beta"] = np.zeros(2 * d)
    params["fc1_W"] = uni(2 * d, (2 * d, config.fc_width))
    params["fc1_b"] = np.zeros(config.fc_width)
    params["fc2_W"] = uni(config.fc_width, (config.fc_width, config.classes))
    params["fc2_b"] = np.zeros(config.classes)
    return params


class GruNetModel:
    def __init__(self, params: dict, config: GruNetConfig, input_width: int):
        self.params = params
        self.config = config
        self.input_width = input_width

    def to_json(self) -> str:
        doc = {
            "version": 1,
            "input_width": self.input_width,
            "config": asdict(self.config),
            "params": {k: v.tolist() for k, v in sorted(self.params.items())},
        }
        return json.dumps(doc, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "GruNetModel":
        doc = json.loads(text)
        if doc.get("version") != 1:
            raise ParseError(f"unsupported model version {doc.get('version')}")
        cfg_doc = dict(doc["config"])
        cfg_doc["layer_widths"] = tuple(cfg_doc["layer_widths"])
        config = GruNetConfig(**cfg_doc)
        params = {k: np.array(v, dtype=float) for k, v in doc["params"].items()}
        return cls(params, config, doc["input_width"])


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------


def gru_forward(params: dict, config: GruNetConfig, X: np.ndarray, mask: np.ndarray):
    """Run the GRU stack over a padded batch.

    X: (B, T, d0), mask: (B, T) with 1.0 on valid steps (trailing pads only).
    Returns (top hidden states (B, T, d), caches for backprop).
    """
    B, T, _ = X.shape
    caches = []
    inp = X
    for l, width in enumerate(config.layer_widths):
        Wz, Uz, bz = params[f"l{l}_Wz"], params[f"l{l}_Uz"], params[f"l{l}_bz"]
        Wr, Ur, br = params[f"l{l}_Wr"], params[f"l{l}_Ur"], params[f"l{l}_br"]
        Wh, Uh, bh = params[f"l{l}_Wh"], params[f"l{l}_Uh"], params[f"l{l}_bh"]
        if inp.shape[2] != Wz.shape[0]:
            raise DataError(
                f"layer {l} expects width {Wz.shape[0]}, got {inp.shape[2]}"
            )
        h = np.zeros((B, width))
        Hs = np.zeros((B, T, width))
        Z = np.zeros((B, T, width))
        R = np.zeros((B, T, width))
        C = np.zeros((B, T, width))
        Hprev = np.zeros((B, T, width))
        for t in range(T):
            x = inp[:, t]
            m = mask[:, t : t + 1]
            z = _sigmoid(x @ Wz + h @ Uz + bz)
            r = _sigmoid(x @ Wr + h @ Ur + br)
            c = np.tanh(x @ Wh + (r * h) @ Uh + bh)
            hn = (1.0 - z) * h + z * c
            Hprev[:, t] = h
            Z[:, t], R[:, t], C[:, t] = z, r, c
            h = m * hn + (1.0 - m) * h
            Hs[:, t] = h
        caches.append({"X": inp, "Z": Z, "R": R, "C": C, "Hprev": Hprev})
        inp = Hs
    return inp, caches


def global_attention(hiddens: np.ndarray, last: np.ndarray, proj: np.ndarray,
                     mask: np.ndarray):
    """Dot-product attention with a projected last-state query.

    hiddens: (B, T, d), last: (B, d), proj: (d, d), mask: (B, T).
    Returns (context (B, d), weights (B, T)) with weights zero on pads.
    """
    q = last @ proj.T  # q_b = proj @ last_b
    scores = np.einsum("btk,bk->bt", hiddens, q)
    scores = np.where(mask > 0, scores, -np.inf)
    scores = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(scores) * (mask > 0)
    alpha = e / e.sum(axis=1, keepdims=True)
    context = np.einsum("bt,btk->bk", alpha, hiddens)
    return context, alpha


def _head_forward(params, config, top, mask, train=False, drop_mask=None):
    B, T, d = top.shape
    last_idx = mask.sum(axis=1).astype(int) - 1
    last = top[np.arange(B), last_idx]
    context, alpha = global_attention(top, last, params["attn_P"], mask)
    v = np.concatenate([context, last], axis=1)
    mu = v.mean(axis=1, keepdims=True)
    var = v.var(axis=1, keepdims=True)
    vhat = (v - mu) / np.sqrt(var + LN_EPS)
    ln_out = params["ln_gamma"] * vhat + params["ln_beta"]
    a1 = ln_out @ params["fc1_W"] + params["fc1_b"]
    r1 = np.maximum(a1, 0.0)
    if train and drop_mask is not None:
        r1 = r1 * drop_mask
    logits = r1 @ params["fc2_W"] + params["fc2_b"]
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=1, keepdims=True)
    cache = {
        "last_idx": last_idx, "last": last, "alpha": alpha, "context": context,
        "v": v, "vhat": vhat, "var": var, "ln_out": ln_out, "a1": a1, "r1": r1,
        "probs": probs, "top": top, "mask": mask, "drop_mask": drop_mask,
    }
    return probs, alpha, cache


def forward(model: GruNetModel, matrix) -> tuple[np.ndarray, np.ndarray]:
    """Inference on one feature matrix; returns (probs, attention weights)."""
    values = matrix.values if hasattr(matrix, "values") else np.asarray(matrix)
    if values.shape[1] != model.input_width:
        raise DataError(
            f"matrix width {values.shape[1]} != model width {model.input_width}"
        )
    X = values[None, :, :].astype(float)
    mask = np.ones((1, values.shape[0]))
    top, _ = gru_forward(model.params, model.config, X, mask)
    probs, alpha, _ = _head_forward(model.params, model.config, top, mask)
    return probs[0], alpha[0]


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------


def _backward(params, config, caches, head_cache, labels):
    """Gradients of mean NLL over the batch with respect to all params."""
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    probs = head_cache["probs"]
    B = probs.shape[0]
    dlogits = probs.copy()
    dlogits[np.arange(B), labels - 1] -= 1.0
    dlogits /= B

    r1 = head_cache["r1"]
    grads["fc2_W"] = r1.T @ dlogits
    grads["fc2_b"] = dlogits.sum(axis=0)
    dr1 = dlogits @ params["fc2_W"].T
    if head_cache["drop_mask"] is not None:
        dr1 = dr1 * head_cache["drop_mask"]
    da1 = dr1 * (head_cache["a1"] > 0)
    grads["fc1_W"] = head_cache["ln_out"].T @ da1
    grads["fc1_b"] = da1.sum(axis=0)
    dln_out = da1 @ params["fc1_W"].T

    vhat = head_cache["vhat"]
    grads["ln_gamma"] = (dln_out * vhat).sum(axis=0)
    grads["ln_beta"] = dln_out.sum(axis=0)
    dvhat = dln_out * params["ln_gamma"]
    std = np.sqrt(head_cache["var"] + LN_EPS)
    dv = (
        dvhat
        - dvhat.mean(axis=1, keepdims=True)
        - vhat * (dvhat * vhat).mean(axis=1, keepdims=True)
    ) / std

    d = head_cache["top"].shape[2]
    dcontext = dv[:, :d]
    dlast = dv[:, d:].copy()

    top = head_cache["top"]
    alpha = head_cache["alpha"]
    last = head_cache["last"]
    q = last @ params["attn_P"].T
    dalpha = np.einsum("bk,btk->bt", dcontext, top)
    dtop = alpha[:, :, None] * dcontext[:, None, :]
    ds = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True))
    dtop += ds[:, :, None] * q[:, None, :]
    dq = np.einsum("bt,btk->bk", ds, top)
    grads["attn_P"] = np.einsum("bk,bj->kj", dq, last)
    dlast += dq @ params["attn_P"]
    last_idx = head_cache["last_idx"]
    dtop[np.arange(B), last_idx] += dlast

    mask = head_cache["mask"]
    dH = dtop
    for l in range(len(config.layer_widths) - 1, -1, -1):
        cache = caches[l]
        X, Z, R, C, Hprev = cache["X"], cache["Z"], cache["R"], cache["C"], cache["Hprev"]
        Wz, Uz = params[f"l{l}_Wz"], params[f"l{l}_Uz"]
        Wr, Ur = params[f"l{l}_Wr"], params[f"l{l}_Ur"]
        Wh, Uh = params[f"l{l}_Wh"], params[f"l{l}_Uh"]
        B_, T, _ = X.shape
        dX = np.zeros_like(X)
        dh = np.zeros((B_, Z.shape[2]))
        gWz = np.zeros_like(Wz); gUz = np.zeros_like(Uz); gbz = np.zeros(Wz.shape[1])
        gWr = np.zeros_like(Wr); gUr = np.zeros_like(Ur); gbr = np.zeros(Wr.shape[1])
        gWh = np.zeros_like(Wh); gUh = np.zeros_like(Uh); gbh = np.zeros(Wh.shape[1])
        for t in range(T - 1, -1, -1):
            m = mask[:, t : t + 1]
            dh_total = dh + dH[:, t]
            dhn = m * dh_total
            dh_carry = (1.0 - m) * dh_total
            z, r, c, hprev = Z[:, t], R[:, t], C[:, t], Hprev[:, t]
            x = X[:, t]
            dc = dhn * z
            dz = dhn * (c - hprev)
            dh_prev = dhn * (1.0 - z)
            dac = dc * (1.0 - c * c)
            gWh += x.T @ dac
            gUh += (r * hprev).T @ dac
            gbh += dac.sum(axis=0)
            d_rh = dac @ Uh.T
            dr = d_rh * hprev
            dh_prev += d_rh * r
            daz = dz * z * (1.0 - z)
            dar = dr * r * (1.0 - r)
            gWz += x.T @ daz
            gUz += hprev.T @ daz
            gbz += daz.sum(axis=0)
            gWr += x.T @ dar
            gUr += hprev.T @ dar
            gbr += dar.sum(axis=0)
            dh_prev += daz @ Uz.T + dar @ Ur.T
            dX[:, t] = dac @ Wh.T + daz @ Wz.T + dar @ Wr.T
            dh = dh_prev + dh_carry
        grads[f"l{l}_Wz"], grads[f"l{l}_Uz"], grads[f"l{l}_bz"] = gWz, gUz, gbz
        grads[f"l{l}_Wr"], grads[f"l{l}_Ur"], grads[f"l{l}_br"] = gWr, gUr, gbr
        grads[f"l{l}_Wh"], grads[f"l{l}_Uh"], grads[f"l{l}_bh"] = gWh, gUh, gbh
        dH = dX
    return grads


def nll_and_grads(params, config, X, mask, labels, train=False, drop_mask=None):
    top, caches = gru_forward(params, config, X, mask)
    probs, _, head_cache = _head_forward(params, config, top, mask, train, drop_mask)
    B = probs.shape[0]
    loss = float(-np.log(np.maximum(probs[np.arange(B), labels - 1], 1e-300)).mean())
    grads = _backward(params, config, caches, head_cache, labels)
    return loss, grads, probs


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _pad_batch(matrices, input_width):
    T = max(m.shape[0] for m in matrices)
    B = len(matrices)
    X = np.zeros((B, T, input_width))
    mask = np.zeros((B, T))
    for i, m in enumerate(matrices):
        X[i, : m.shape[0]] = m
        mask[i, : m.shape[0]] = 1.0
    return X, mask


def train_deepgru(corpus, config: GruNetConfig) -> GruNetModel:
    """Adam on mean NLL; length-bucketed batching, deterministic per seed.

    ``corpus`` is a list of (FeatureMatrix or array, label in {1,2,3}).
    """
    items = [
        (m.values if hasattr(m, "values") else np.asarray(m, dtype=float), int(label))
        for m, label in corpus
    ]
    if not items:
        raise TrainingError("empty training corpus")
    labels_present = {label for _, label in items}
    if labels_present != {1, 2, 3}:
        raise TrainingError(f"need examples of every class, got {sorted(labels_present)}")
    input_width = items[0][0].shape[1]
    if any(m.shape[1] != input_width for m, _ in items):
        raise DataError("inconsistent feature widths in corpus")

    params = init_params(config, input_width)
    rng = np.random.default_rng(config.seed + 1)

    # bucket by length so batches waste little padding
    by_length = sorted(range(len(items)), key=lambda i: (items[i][0].shape[0], i))
    batches = [by_length[i : i + config.batch] for i in range(0, len(by_length), config.batch)]

    adam_m = {k: np.zeros_like(v) for k, v in params.items()}
    adam_v = {k: np.zeros_like(v) for k, v in params.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(batches))
        for b_pos, b_idx in enumerate(order):
            batch = batches[b_idx]
            X, mask = _pad_batch([items[i][0] for i in batch], input_width)
            labels = np.array([items[i][1] for i in batch])
            drop_mask = None
            if config.dropout > 0.0:
                keep = 1.0 - config.dropout
                drop_mask = (rng.random((len(batch), config.fc_width)) < keep) / keep
            loss, grads, _ = nll_and_grads(
                params, config, X, mask, labels, train=True, drop_mask=drop_mask
            )
            if not np.isfinite(loss):
                raise TrainingError(
                    f"training diverged at epoch {epoch + 1}, batch {b_pos + 1}"
                )
            step += 1
            for key, grad in grads.items():
                adam_m[key] = beta1 * adam_m[key] + (1 - beta1) * grad
                adam_v[key] = beta2 * adam_v[key] + (1 - beta2) * grad * grad
                m_hat = adam_m[key] / (1 - beta1 ** step)
                v_hat = adam_v[key] / (1 - beta2 ** step)
                params[key] -= config.lr * m_hat / (np.sqrt(v_hat) + eps)
    return GruNetModel(params, config, input_width)


def corpus_nll(model: GruNetModel, corpus) -> float:
    """Mean NLL over a corpus at inference settings."""
    losses = []
    for m, label in corpus:
        probs, _ = forward(model, m)
        losses.append(-np.log(max(probs[int(label) - 1], 1e-300)))
    return float(np.mean(losses))


# ---------------------------------------------------------------------------
# Gradient check
# ---------------------------------------------------------------------------


def gradient_check(model: GruNetModel, example, step: float = 1e-5) -> float:
    """Max relative error of backprop vs central finite differences.

    ``example`` is (matrix, label). Dropout is disabled; intended for tiny
    configs (widths <= 8, short sequences).
    """
    values = example[0].values if hasattr(example[0], "values") else np.asarray(example[0])
    label = int(example[1])
    X = values[None, :, :].astype(float)
    mask = np.ones((1, values.shape[0]))
    labels = np.array([label])
    params = model.params

    _, grads, _ = nll_and_grads(params, model.config, X, mask, labels)

    def loss_at() -> float:
        top, _ = gru_forward(params, model.config, X, mask)
        probs, _, _ = _head_forward(params, model.config, top, mask)
        return float(-np.log(max(probs[0, label - 1], 1e-300)))

    worst = 0.0
    for key in sorted(params):
        flat = params[key].reshape(-1)
        gflat = grads[key].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_at()
            flat[i] = orig - step
            down = loss_at()
            flat[i] = orig
            numeric = (up - down) / (2 * step)
            denom = max(abs(gflat[i]), abs(numeric), 1e-6)
            worst = max(worst, abs(gflat[i] - numeric) / denom)
    return worst
