"""Sentence encoders (BOW / RNN / CNN) and the image projection, with hand-written gradients.

Parameters live in a flat ``dict[str, np.ndarray]`` (float64). Names:

    embedding                    |V| x N
    image.W, image.b             D x N, N
    rnn.{l}.Wx, rnn.{l}.Wh, rnn.{l}.b
                                 per-layer gate weights; gates are stacked
                                 column-wise (GRU: z, r, n; LSTM: i, f, g, o)
    rnn.out                      H x N, only when hidden != N
    cnn.conv{w}.W, cnn.conv{w}.b (w*N) x C, C for every filter width w
    cnn.fc.W, cnn.fc.b           (len(widths)*C) x N, N
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    DegenerateEmbedding,
    DegenerateVector,
    EmptyInput,
    ShapeError,
)

BOW_SUM = "BOW_SUM"
BOW_MEAN = "BOW_MEAN"
RNN_GRU = "RNN_GRU"
RNN_LSTM = "RNN_LSTM"
CNN = "CNN"
ENCODER_KINDS = (BOW_SUM, BOW_MEAN, RNN_GRU, RNN_LSTM, CNN)
BOW_KINDS = (BOW_SUM, BOW_MEAN)
RNN_KINDS = (RNN_GRU, RNN_LSTM)

DEFAULT_FILTER_WIDTHS = (2, 3, 4, 5)
NORM_EPS = 1e-12


@dataclass(frozen=True)
class EncoderSpec:
    kind: str = BOW_SUM
    layers: int | None = None
    hidden: int | None = None
    filter_widths: tuple[int, ...] | None = None
    normalize_output: bool = False

    def __post_init__(self):
        if self.kind not in ENCODER_KINDS:
            raise ConfigError(f"unknown encoder kind {self.kind!r}")
        rnn, cnn = self.kind in RNN_KINDS, self.kind == CNN
        if rnn:
            if self.layers is None or self.layers < 1:
                raise ConfigError("RNN encoders need layers >= 1")
        elif self.layers is not None:
            raise ConfigError(f"layers is not applicable to {self.kind}")
        if rnn or cnn:
            if self.hidden is None or self.hidden < 1:
                raise ConfigError(f"{self.kind} needs hidden >= 1")
        elif self.hidden is not None:
            raise ConfigError(f"hidden is not applicable to {self.kind}")
        if cnn:
            if not self.filter_widths or min(self.filter_widths) < 1:
                raise ConfigError("CNN needs a non-empty list of positive filter widths")
            object.__setattr__(self, "filter_widths", tuple(int(w) for w in self.filter_widths))
        elif self.filter_widths is not None:
            raise ConfigError(f"filter_widths is not applicable to {self.kind}")

    @classmethod
    def create(cls, kind, hidden=None, layers=None, filter_widths=None, normalize_output=False):
        """Build a spec, filling kind-appropriate defaults and dropping inapplicable fields."""
        kind = kind.upper()
        if kind in RNN_KINDS:
            return cls(kind, layers=layers or 1, hidden=hidden or 128,
                       normalize_output=normalize_output)
        if kind == CNN:
            return cls(kind, hidden=hidden or 128,
                       filter_widths=tuple(filter_widths or DEFAULT_FILTER_WIDTHS),
                       normalize_output=normalize_output)
        return cls(kind, normalize_output=normalize_output)


def _gate_count(kind):
    return 3 if kind == RNN_GRU else 4


def init_params(spec, vocab_size, dim, feature_dim, rng, scale=0.1):
    """Uniform(-scale, scale) initialization; LSTM forget-gate biases start at 1."""

    def u(*shape):
        return rng.uniform(-scale, scale, size=shape)

    params = {"embedding": u(vocab_size, dim)}
    if spec.kind in RNN_KINDS:
        g, h = _gate_count(spec.kind), spec.hidden
        for layer in range(spec.layers):
            in_dim = dim if layer == 0 else h
            params[f"rnn.{layer}.Wx"] = u(in_dim, g * h)
            params[f"rnn.{layer}.Wh"] = u(h, g * h)
            b = u(g * h)
            if spec.kind == RNN_LSTM:
                b[h:2 * h] = 1.0
            params[f"rnn.{layer}.b"] = b
        if h != dim:
            params["rnn.out"] = u(h, dim)
    elif spec.kind == CNN:
        c = spec.hidden
        for w in spec.filter_widths:
            params[f"cnn.conv{w}.W"] = u(w * dim, c)
            params[f"cnn.conv{w}.b"] = u(c)
        params["cnn.fc.W"] = u(len(spec.filter_widths) * c, dim)
        params["cnn.fc.b"] = u(dim)
    params["image.W"] = u(feature_dim, dim)
    params["image.b"] = u(dim)
    return params


def zeros_like_params(params):
    return {name: np.zeros_like(value) for name, value in params.items()}


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _check_ids(token_ids):
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise EmptyInput("token sequence is empty")
    return ids


# --- BOW -------------------------------------------------------------------

def bow_encode(params, token_ids, mode=BOW_SUM, normalize=False):
    ids = _check_ids(token_ids)
    out = params["embedding"][ids].sum(axis=0)
    if mode == BOW_MEAN:
        out = out / len(ids)
    if normalize:
        norm = np.linalg.norm(out)
        if norm < NORM_EPS:
            raise DegenerateEmbedding("bag-of-words aggregate has zero norm")
        out = out / norm
    return out


def _bow_forward(params, ids, spec):
    out = params["embedding"][ids].sum(axis=0)
    if spec.kind == BOW_MEAN:
        out = out / len(ids)
    return out, None


def _bow_backward(params, ids, spec, cache, grad_out, grads):
    g = grad_out / len(ids) if spec.kind == BOW_MEAN else grad_out
    np.add.at(grads["embedding"], ids, g)


# --- RNN -------------------------------------------------------------------

def _gru_step(x, a_x, h, Wh, H):
    a_h = h @ Wh
    zr = _sigmoid(a_x[:2 * H] + a_h[:2 * H])
    z, r = zr[:H], zr[H:]
    hn = a_h[2 * H:]
    n = np.tanh(a_x[2 * H:] + r * hn)
    h_new = (1.0 - z) * n + z * h
    return h_new, (x, h, z, r, n, hn)


def _gru_step_back(dh_new, cache, Wx, Wh, H, gWx, gWh, gb):
    x, h, z, r, n, hn = cache
    dn = dh_new * (1.0 - z)
    dz = dh_new * (h - n)
    dh = dh_new * z
    dan = dn * (1.0 - n * n)
    dr = dan * hn
    dhn = dan * r
    daz = dz * z * (1.0 - z)
    dar = dr * r * (1.0 - r)
    da_x = np.concatenate([daz, dar, dan])
    da_h = np.concatenate([daz, dar, dhn])
    gWx += np.outer(x, da_x)
    gWh += np.outer(h, da_h)
    gb += da_x
    dx = Wx @ da_x
    dh = dh + Wh @ da_h
    return dx, dh


def _lstm_step(x, a_x, state, Wh, H):
    h, c = state
    a = a_x + h @ Wh
    gates = _sigmoid(a)
    i, f, o = gates[:H], gates[H:2 * H], gates[3 * H:]
    g = np.tanh(a[2 * H:3 * H])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return (h_new, c_new), (x, h, c, i, f, g, o, tc)


def _lstm_step_back(dh_new, dc_new, cache, Wx, Wh, H, gWx, gWh, gb):
    x, h, c, i, f, g, o, tc = cache
    do = dh_new * tc
    dc = dc_new + dh_new * o * (1.0 - tc * tc)
    di = dc * g
    df = dc * c
    dg = dc * i
    da = np.concatenate([di * i * (1.0 - i), df * f * (1.0 - f),
                         dg * (1.0 - g * g), do * o * (1.0 - o)])
    gWx += np.outer(x, da)
    gWh += np.outer(h, da)
    gb += da
    return Wx @ da, Wh @ da, dc * f


def _rnn_forward(params, ids, spec):
    H = spec.hidden
    seq = params["embedding"][ids]
    caches = []
    for layer in range(spec.layers):
        Wx, Wh, b = (params[f"rnn.{layer}.{k}"] for k in ("Wx", "Wh", "b"))
        a_xs = seq @ Wx + b  # input contributions for every step at once
        outputs, layer_cache = [], []
        if spec.kind == RNN_GRU:
            h = np.zeros(H)
            for x, a_x in zip(seq, a_xs):
                h, cache = _gru_step(x, a_x, h, Wh, H)
                outputs.append(h)
                layer_cache.append(cache)
        else:
            state = (np.zeros(H), np.zeros(H))
            for x, a_x in zip(seq, a_xs):
                state, cache = _lstm_step(x, a_x, state, Wh, H)
                outputs.append(state[0])
                layer_cache.append(cache)
        caches.append(layer_cache)
        seq = np.array(outputs)
    last = seq[-1]
    out = last @ params["rnn.out"] if "rnn.out" in params else last.copy()
    return out, (caches, last)


def _rnn_backward(params, ids, spec, cache, grad_out, grads):
    H, T = spec.hidden, len(ids)
    caches, last = cache
    if "rnn.out" in params:
        grads["rnn.out"] += np.outer(last, grad_out)
        dh_top = params["rnn.out"] @ grad_out
    else:
        dh_top = grad_out
    # gradient w.r.t. each output of the current layer
    d_outputs = np.zeros((T, H))
    d_outputs[-1] = dh_top
    for layer in reversed(range(spec.layers)):
        Wx, Wh = params[f"rnn.{layer}.Wx"], params[f"rnn.{layer}.Wh"]
        gWx, gWh, gb = (grads[f"rnn.{layer}.{k}"] for k in ("Wx", "Wh", "b"))
        d_inputs = np.zeros((T, Wx.shape[0]))
        dh = np.zeros(H)
        dc = np.zeros(H)
        for t in reversed(range(T)):
            dh = dh + d_outputs[t]
            if spec.kind == RNN_GRU:
                d_inputs[t], dh = _gru_step_back(dh, caches[layer][t], Wx, Wh, H, gWx, gWh, gb)
            else:
                d_inputs[t], dh, dc = _lstm_step_back(dh, dc, caches[layer][t], Wx, Wh, H,
                                                      gWx, gWh, gb)
        d_outputs = d_inputs
    np.add.at(grads["embedding"], ids, d_outputs)


def rnn_encode(params, token_ids, spec):
    ids = _check_ids(token_ids)
    return _rnn_forward(params, ids, spec)[0]


# --- CNN -------------------------------------------------------------------

def _cnn_forward(params, ids, spec):
    emb = params["embedding"][ids]
    T, N = emb.shape
    T_pad = max(T, max(spec.filter_widths))
    padded = np.zeros((T_pad, N))
    padded[:T] = emb
    pooled, per_width = [], []
    for w in spec.filter_widths:
        n_pos = T_pad - w + 1
        windows = np.stack([padded[t:t + w].ravel() for t in range(n_pos)])
        act = np.tanh(windows @ params[f"cnn.conv{w}.W"] + params[f"cnn.conv{w}.b"])
        arg = act.argmax(axis=0)
        pooled.append(act[arg, np.arange(act.shape[1])])
        per_width.append((windows, act, arg))
    features = np.concatenate(pooled)
    out = features @ params["cnn.fc.W"] + params["cnn.fc.b"]
    return out, (T, N, T_pad, features, per_width)


def _cnn_backward(params, ids, spec, cache, grad_out, grads):
    T, N, T_pad, features, per_width = cache
    grads["cnn.fc.W"] += np.outer(features, grad_out)
    grads["cnn.fc.b"] += grad_out
    d_features = params["cnn.fc.W"] @ grad_out
    d_padded = np.zeros((T_pad, N))
    C = spec.hidden
    for k, w in enumerate(spec.filter_widths):
        windows, act, arg = per_width[k]
        cols = np.arange(C)
        d_pre = np.zeros_like(act)
        picked = act[arg, cols]
        d_pre[arg, cols] = d_features[k * C:(k + 1) * C] * (1.0 - picked * picked)
        grads[f"cnn.conv{w}.W"] += windows.T @ d_pre
        grads[f"cnn.conv{w}.b"] += d_pre.sum(axis=0)
        d_windows = d_pre @ params[f"cnn.conv{w}.W"].T
        for t in range(d_windows.shape[0]):
            d_padded[t:t + w] += d_windows[t].reshape(w, N)
    np.add.at(grads["embedding"], ids, d_padded[:T])


def cnn_encode(params, token_ids, spec):
    ids = _check_ids(token_ids)
    return _cnn_forward(params, ids, spec)[0]


# --- dispatch --------------------------------------------------------------

_FORWARD = {BOW_SUM: _bow_forward, BOW_MEAN: _bow_forward,
            RNN_GRU: _rnn_forward, RNN_LSTM: _rnn_forward, CNN: _cnn_forward}
_BACKWARD = {BOW_SUM: _bow_backward, BOW_MEAN: _bow_backward,
             RNN_GRU: _rnn_backward, RNN_LSTM: _rnn_backward, CNN: _cnn_backward}


def encode_with_cache(params, token_ids, spec):
    """Forward pass returning the sentence vector and whatever backward needs."""
    ids = _check_ids(token_ids)
    raw, cache = _FORWARD[spec.kind](params, ids, spec)
    if not spec.normalize_output:
        return raw, (ids, cache, None)
    norm = np.linalg.norm(raw)
    if norm < NORM_EPS:
        raise DegenerateEmbedding(f"{spec.kind} output has zero norm, cannot normalize")
    out = raw / norm
    return out, (ids, cache, (out, norm))


def encode(params, token_ids, spec):
    return encode_with_cache(params, token_ids, spec)[0]


def accumulate_encoder_grads(params, spec, cache, grad_out, grads):
    ids, inner, norm_cache = cache
    if norm_cache is not None:
        out, norm = norm_cache
        grad_out = (grad_out - out * (out @ grad_out)) / norm
    _BACKWARD[spec.kind](params, ids, spec, inner, grad_out, grads)


def encoder_backward(params, token_ids, spec, upstream_grad):
    """Gradient of ``upstream_grad . encode(params, token_ids)`` for every parameter."""
    _, cache = encode_with_cache(params, token_ids, spec)
    grads = zeros_like_params(params)
    accumulate_encoder_grads(params, spec, cache, np.asarray(upstream_grad, dtype=float), grads)
    return grads


# --- image side and similarity ---------------------------------------------

def project_image(weight, bias, feature):
    feature = np.asarray(feature, dtype=float)
    if feature.shape[-1] != weight.shape[0]:
        raise ShapeError(f"feature has length {feature.shape[-1]}, "
                         f"projection expects {weight.shape[0]}")
    return feature @ weight + bias


def cosine_similarity(v1, v2):
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    if v1.shape != v2.shape:
        raise ShapeError(f"cannot compare vectors of shape {v1.shape} and {v2.shape}")
    n1, n2 = np.linalg.norm(v1), np.linalg.norm(v2)
    if n1 < NORM_EPS or n2 < NORM_EPS:
        raise DegenerateVector("cosine similarity of a (near-)zero vector")
    return float(np.clip(v1 @ v2 / (n1 * n2), -1.0, 1.0))


def cosine_with_grads(u, v):
    """Cosine of u and v plus its partial derivatives with respect to u and v."""
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu < NORM_EPS or nv < NORM_EPS:
        raise DegenerateVector("cosine similarity of a (near-)zero vector")
    s = u @ v / (nu * nv)
    du = v / (nu * nv) - s * u / (nu * nu)
    dv = u / (nu * nv) - s * v / (nv * nv)
    return s, du, dv
