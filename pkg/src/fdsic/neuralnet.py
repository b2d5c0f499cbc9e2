"""The five SI-cancellation architectures with hand-written backpropagation.

Architectures (all causal, same-length output, zero history before sample 0):

``linear``              complex FIR of ``context_len`` taps
``hammerstein``         magnitude MLP (tanh) -> FIR
``wiener``              FIR -> magnitude MLP (ReLU)
``wiener_hammerstein``  magnitude MLP (tanh) -> FIR -> magnitude MLP (ReLU)
``ffnn``                window of ``context_len`` complex samples as 2*context_len
                        reals -> ReLU hidden layers -> 2 linear outputs (re, im)

A magnitude MLP maps ``x`` to ``M(|x|) * exp(j arg x)`` where ``M`` is a scalar
real network (one hidden layer, linear single-unit output).

Gradients follow the real-pair convention: for a complex signal ``y`` the
upstream gradient is passed as ``dL/dRe(y) + 1j * dL/dIm(y)``.  Parameters live
in one flat float64 vector; complex FIR taps are stored as interleaved
(re, im) pairs.
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .rng import generator
from .signal import ComplexSeq, as_array

KINDS = ("linear", "hammerstein", "wiener", "wiener_hammerstein", "ffnn")


class LayoutError(ValueError):
    """Parameter vector does not match the architecture."""


@dataclass(frozen=True)
class MagnitudeMlpSpec:
    hidden_width: int = 8
    activation: str = "tanh"
    use_bias: bool = False
    # None: follow use_bias
    output_bias: bool | None = None

    def __post_init__(self):
        if self.hidden_width < 1:
            raise ValueError("hidden_width must be positive")
        if self.activation not in ("tanh", "relu"):
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def has_output_bias(self):
        return self.use_bias if self.output_bias is None else self.output_bias


@dataclass(frozen=True)
class ModelArch:
    kind: str
    context_len: int = 13
    mlp_pre: MagnitudeMlpSpec | None = None
    mlp_post: MagnitudeMlpSpec | None = None
    ffnn_hidden: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "ffnn_hidden", tuple(int(w) for w in self.ffnn_hidden))
        if self.kind not in KINDS:
            raise ValueError(f"unknown architecture {self.kind!r}")
        if self.context_len < 1:
            raise ValueError("context_len must be positive")
        pre, post = self.mlp_pre is not None, self.mlp_post is not None
        expected = {
            "linear": (False, False),
            "hammerstein": (True, False),
            "wiener": (False, True),
            "wiener_hammerstein": (True, True),
            "ffnn": (False, False),
        }[self.kind]
        if (pre, post) != expected:
            raise ValueError(f"{self.kind}: mlp_pre/mlp_post presence must be {expected}")
        if (self.kind == "ffnn") != bool(self.ffnn_hidden):
            raise ValueError("ffnn_hidden must be non-empty exactly for kind='ffnn'")
        if any(w < 1 for w in self.ffnn_hidden):
            raise ValueError("ffnn hidden widths must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("mlp_pre", "mlp_post"):
            if d.get(key) is not None:
                d[key] = MagnitudeMlpSpec(**d[key])
        d["ffnn_hidden"] = tuple(d.get("ffnn_hidden", ()))
        return cls(**d)


HAMMERSTEIN_MLP = MagnitudeMlpSpec(8, "tanh", use_bias=False)
WIENER_MLP = MagnitudeMlpSpec(8, "relu", use_bias=True, output_bias=True)
WH_POST_MLP = MagnitudeMlpSpec(8, "relu", use_bias=True, output_bias=False)


def default_arch(kind, context_len=13):
    """Architectures with the sizing that reproduces the reference parameter counts."""
    if kind == "linear":
        return ModelArch("linear", context_len)
    if kind == "hammerstein":
        return ModelArch("hammerstein", context_len, mlp_pre=HAMMERSTEIN_MLP)
    if kind == "wiener":
        return ModelArch("wiener", context_len, mlp_post=WIENER_MLP)
    if kind == "wiener_hammerstein":
        return ModelArch("wiener_hammerstein", context_len, mlp_pre=HAMMERSTEIN_MLP, mlp_post=WH_POST_MLP)
    if kind == "ffnn":
        return ModelArch("ffnn", context_len, ffnn_hidden=(17,))
    raise ValueError(f"unknown architecture {kind!r}")


# -- parameter layout ---------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    offset: int
    length: int
    shape: tuple
    complex_pair: bool = False


@dataclass
class ParamVector:
    values: np.ndarray
    layout: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        total = sum(seg.length for seg in self.layout.values())
        if self.values.ndim != 1 or self.values.size != total:
            raise LayoutError(f"parameter vector has {self.values.size} values, layout covers {total}")

    def __len__(self):
        return self.values.size

    def segment(self, name):
        """View of one segment reshaped to its shape (complex for FIR taps)."""
        seg = self.layout[name]
        flat = self.values[seg.offset: seg.offset + seg.length]
        if seg.complex_pair:
            return flat[0::2] + 1j * flat[1::2]
        return flat.reshape(seg.shape)

    def copy(self):
        return ParamVector(self.values.copy(), self.layout)


def _mlp_segments(prefix, spec):
    h = spec.hidden_width
    segs = [(f"{prefix}.w_in", (h,), False)]
    if spec.use_bias:
        segs.append((f"{prefix}.b_in", (h,), False))
    segs.append((f"{prefix}.w_out", (h,), False))
    if spec.has_output_bias:
        segs.append((f"{prefix}.b_out", (1,), False))
    return segs


def param_layout(arch):
    """Ordered segment map for ``arch``."""
    L = arch.context_len
    fir = [("fir.taps", (L,), True)]
    if arch.kind == "linear":
        segs = fir
    elif arch.kind == "hammerstein":
        segs = _mlp_segments("mlp_pre", arch.mlp_pre) + fir
    elif arch.kind == "wiener":
        segs = fir + _mlp_segments("mlp_post", arch.mlp_post)
    elif arch.kind == "wiener_hammerstein":
        segs = _mlp_segments("mlp_pre", arch.mlp_pre) + fir + _mlp_segments("mlp_post", arch.mlp_post)
    else:
        widths = (2 * L,) + arch.ffnn_hidden + (2,)
        segs = []
        for i, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
            segs += [(f"dense{i}.W", (n_in, n_out), False), (f"dense{i}.b", (n_out,), False)]
    layout, offset = {}, 0
    for name, shape, cplx in segs:
        length = int(np.prod(shape)) * (2 if cplx else 1)
        layout[name] = Segment(offset, length, shape, cplx)
        offset += length
    return layout


def count_params(arch):
    return sum(seg.length for seg in param_layout(arch).values())


def count_macs(arch, n_samples):
    """GMACs under the one-MAC-per-real-parameter-per-output-sample convention."""
    if n_samples < 0:
        raise ValueError("n_samples must be nonnegative")
    return count_params(arch) * n_samples / 1e9


def init_params(arch, seed=0):
    """Deterministic initialization.

    FIR taps: unit impulse plus 1e-2 Gaussian noise.  Dense and output weights:
    U(-sqrt(1/fan_in), sqrt(1/fan_in)).  Magnitude-MLP input weights: U(0, 1),
    since their input is a nonnegative magnitude and a negative weight with zero
    bias would start a ReLU unit dead.  Biases: zero.
    """
    rng = generator(seed)
    layout = param_layout(arch)
    values = np.zeros(sum(seg.length for seg in layout.values()))
    for name, seg in layout.items():
        sl = slice(seg.offset, seg.offset + seg.length)
        if name == "fir.taps":
            values[sl] = 1e-2 * rng.standard_normal(seg.length)
            values[seg.offset] += 1.0
        elif name.endswith(".w_in"):
            values[sl] = rng.uniform(0.0, 1.0, seg.length)
        elif name.endswith(".w_out"):
            bound = np.sqrt(1.0 / seg.shape[0])
            values[sl] = rng.uniform(-bound, bound, seg.length)
        elif name.endswith(".W"):
            bound = np.sqrt(1.0 / seg.shape[0])
            values[sl] = rng.uniform(-bound, bound, seg.length)
    return ParamVector(values, layout)


def output_segment(arch):
    """Name of the weight segment that scales the model output."""
    if arch.kind == "linear":
        return "fir.taps"
    if arch.kind == "ffnn":
        return f"dense{len(arch.ffnn_hidden)}.W"
    return "mlp_post.w_out" if arch.mlp_post is not None else "mlp_pre.w_out"


def zero_output_params(arch, seed=0):
    """``init_params`` with the output weights zeroed, so the model starts at y = 0."""
    params = init_params(arch, seed)
    seg = params.layout[output_segment(arch)]
    params.values[seg.offset: seg.offset + seg.length] = 0.0
    return params


def _check_layout(arch, params):
    if params.layout != param_layout(arch):
        raise LayoutError(f"parameter layout does not match architecture {arch.kind!r}")


# -- building blocks ----------------------------------------------------------


def context_matrix(x, L):
    """N x L matrix with row k = [x[k], x[k-1], ..., x[k-L+1]] (zeros before 0)."""
    xp = np.concatenate([np.zeros(L - 1, dtype=x.dtype), x])
    return sliding_window_view(xp, L)[:, ::-1]


def _fir_bwd(g, x, taps, need_input_grad):
    n, L = g.size, taps.size
    g_taps = np.array([np.vdot(x[: n - l], g[l:]) for l in range(L)])
    g_x = None
    if need_input_grad:
        g_x = np.correlate(np.concatenate([g, np.zeros(L - 1, dtype=g.dtype)]), taps, "valid")
    return g_taps, g_x


def _act(a, kind):
    return np.tanh(a) if kind == "tanh" else np.maximum(a, 0.0)


def _act_grad(a, h, kind):
    if kind == "tanh":
        d = h * h
        return np.subtract(1.0, d, out=d)
    return a > 0


def scalar_mlp(r, spec, p):
    """Real MLP on magnitudes ``r``; ``p`` maps segment suffixes to arrays.

    Hidden activations are kept hidden-major (H x N).
    """
    a = p["w_in"][:, None] * r
    if spec.use_bias:
        a += p["b_in"][:, None]
    h = _act(a, spec.activation)
    m = p["w_out"] @ h
    if spec.has_output_bias:
        m += p["b_out"][0]
    return m, (a, h)


def _mag_fwd(x, spec, p):
    r = np.abs(x)
    nz = r > 0
    all_nz = bool(nz.all())
    safe = r if all_nz else np.where(nz, r, 1.0)
    u = x.real / safe + 1j * (x.imag / safe)  # complex / real would overflow for subnormal |x|
    if not all_nz:
        u[~nz] = 1.0
    m, (a, h) = scalar_mlp(r, spec, p)
    return m * u, (r, u, nz, m, a, h)


def _mag_bwd(g, cache, spec, p, need_input_grad):
    r, u, nz, m, a, h = cache
    g_m = u.real * g.real + u.imag * g.imag
    grads = {"w_out": h @ g_m}
    if spec.has_output_bias:
        grads["b_out"] = np.array([g_m.sum()])
    g_a = _act_grad(a, h, spec.activation) * (p["w_out"][:, None] * g_m)
    grads["w_in"] = g_a @ r
    if spec.use_bias:
        grads["b_in"] = g_a.sum(axis=1)
    g_x = None
    if need_input_grad:
        g_r = p["w_in"] @ g_a
        ratio = m / np.where(nz, r, 1.0)
        # g_x = g_r u + (m / r) (g - g_m u), with subgradient 0 at x = 0
        g_x = (g_r - ratio * g_m) * u + ratio * g
        g_x[~nz] = 0.0
    return grads, g_x


def _mlp_params(params, prefix):
    return {
        name.split(".", 1)[1]: params.segment(name)
        for name in params.layout
        if name.startswith(prefix + ".")
    }


def mlp_forward(x, spec, params, prefix=None):
    """Magnitude-domain MLP applied sample-wise: ``M(|x|) * exp(j arg x)``.

    ``params`` is either a dict with keys ``w_in``, ``w_out`` (and ``b_in``,
    ``b_out`` when biased) or a ParamVector together with the segment
    ``prefix`` (``"mlp_pre"`` or ``"mlp_post"``).
    """
    p = _mlp_params(params, prefix) if isinstance(params, ParamVector) else params
    out, _ = _mag_fwd(np.atleast_1d(np.asarray(x, dtype=np.complex128)), spec, p)
    return out[0] if np.ndim(x) == 0 else out


# -- whole-model forward / backward ------------------------------------------


def input_features(arch, x):
    """Parameter-independent first-layer input, reusable across training steps.

    Row ``k`` depends only on ``x[:k+1]``, so rows can be sliced freely.
    Returns None for architectures whose first stage is a magnitude MLP.
    """
    x = as_array(x)
    if arch.kind == "ffnn":
        X = context_matrix(x, arch.context_len)
        return np.ascontiguousarray(np.concatenate([X.real, X.imag], axis=1))
    if arch.mlp_pre is None:
        return np.ascontiguousarray(context_matrix(x, arch.context_len))
    return None


def _forward(arch, params, x, feats=None):
    """Returns (output, tape) where tape records what backward needs."""
    tape = []
    if arch.kind == "ffnn":
        act = input_features(arch, x) if feats is None else feats
        n_layers = len(arch.ffnn_hidden) + 1
        for i in range(n_layers):
            W, b = params.segment(f"dense{i}.W"), params.segment(f"dense{i}.b")
            z = act @ W + b
            tape.append((act, z))
            act = np.maximum(z, 0.0) if i < n_layers - 1 else z
        return act[:, 0] + 1j * act[:, 1], tape

    y = x
    if arch.mlp_pre is not None:
        y, cache = _mag_fwd(y, arch.mlp_pre, _mlp_params(params, "mlp_pre"))
        tape.append(("mlp_pre", cache))
        feats = None
    taps = params.segment("fir.taps")
    tape.append(("fir", (y, taps)))
    y = np.convolve(y, taps)[: y.size] if feats is None else feats @ taps
    if arch.mlp_post is not None:
        y, cache = _mag_fwd(y, arch.mlp_post, _mlp_params(params, "mlp_post"))
        tape.append(("mlp_post", cache))
    return y, tape


def _backward(arch, params, tape, g):
    grad = np.zeros_like(params.values)
    layout = params.layout

    def put(name, value):
        seg = layout[name]
        if seg.complex_pair:
            grad[seg.offset: seg.offset + seg.length: 2] = value.real
            grad[seg.offset + 1: seg.offset + seg.length: 2] = value.imag
        else:
            grad[seg.offset: seg.offset + seg.length] = np.ravel(value)

    if arch.kind == "ffnn":
        g_act = np.stack([g.real, g.imag], axis=1)
        for i in reversed(range(len(tape))):
            act_in, z = tape[i]
            if i < len(tape) - 1:
                g_act = g_act * (z > 0)
            put(f"dense{i}.W", act_in.T @ g_act)
            put(f"dense{i}.b", g_act.sum(axis=0))
            if i > 0:
                g_act = g_act @ params.segment(f"dense{i}.W").T
        return grad

    for pos in reversed(range(len(tape))):
        name, cache = tape[pos]
        need_input = pos > 0
        if name == "fir":
            fir_in, taps = cache
            g_taps, g = _fir_bwd(g, fir_in, taps, need_input)
            put("fir.taps", g_taps)
        else:
            spec = arch.mlp_pre if name == "mlp_pre" else arch.mlp_post
            grads, g = _mag_bwd(g, cache, spec, _mlp_params(params, name), need_input)
            for key, value in grads.items():
                put(f"{name}.{key}", value)
    return grad


def forward(arch, params, x, feats=None):
    """Model output for input ``x`` (ComplexSeq in, ComplexSeq out; arrays likewise)."""
    _check_layout(arch, params)
    y, _ = _forward(arch, params, as_array(x), feats)
    return x.with_samples(y) if isinstance(x, ComplexSeq) else y


def backward(arch, params, x, upstream):
    """Gradient of the loss w.r.t. the flat parameter vector.

    ``upstream`` is ``dL/dRe(y) + 1j * dL/dIm(y)`` for the model output ``y``.
    Returns a ParamVector sharing the parameter layout.
    """
    _check_layout(arch, params)
    _, tape = _forward(arch, params, as_array(x))
    g = np.asarray(as_array(upstream), dtype=np.complex128)
    return ParamVector(_backward(arch, params, tape, g), params.layout)


def mse_and_grad(arch, params, x, target, stop=None, feats=None):
    """MSE over output samples ``[0, stop)`` and its parameter gradient.

    Causality means the input can be truncated at ``stop`` as well.  ``feats``
    optionally supplies :func:`input_features` of the full input.
    """
    x, t = as_array(x), as_array(target)
    if stop is not None:
        x, t = x[:stop], t[:stop]
        feats = None if feats is None else feats[:stop]
    y, tape = _forward(arch, params, x, feats)
    e = y - t
    loss = float(np.mean(e.real**2 + e.imag**2))
    grad = _backward(arch, params, tape, (2.0 / e.size) * e)
    return loss, grad


# -- checkpoints ---------------------------------------------------------------


def _sibling(path, suffix):
    # append rather than replace: stems may contain dots
    return path.with_name(path.name + suffix)


def save_checkpoint(path, arch, params, seed=None):
    """``<path>.json`` (arch, layout, seed) plus ``<path>.f64`` (raw little-endian float64)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "arch": arch.to_dict(),
        "layout": {k: asdict(v) for k, v in params.layout.items()},
        "seed": seed,
        "n_params": len(params),
    }
    raw = _sibling(path, ".f64")
    tmp = raw.with_name(raw.name + ".tmp")
    params.values.astype("<f8").tofile(tmp)
    tmp.replace(raw)
    tmp = _sibling(path, ".json.tmp")
    tmp.write_text(json.dumps(meta, indent=2))
    tmp.replace(_sibling(path, ".json"))


def load_checkpoint(path):
    path = Path(path)
    meta = json.loads(_sibling(path, ".json").read_text())
    arch = ModelArch.from_dict(meta["arch"])
    values = np.fromfile(_sibling(path, ".f64"), dtype="<f8")
    params = ParamVector(values, param_layout(arch))
    return arch, params, meta.get("seed")
