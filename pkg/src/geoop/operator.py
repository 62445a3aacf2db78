"""Compact spectral neural operator with hand-written reverse-mode gradients.

Architecture: a pointwise lift to ``width`` channels, L blocks of
(spectral convolution + 1x1 bypass -> GELU -> augmentation slot), and a
two-stage pointwise projection head. The augmentation slot is one of

* ``none`` - pass-through,
* ``mcl``  - the norm-stable low-rank skew update z + alpha*A z,
* ``mlp``  - a residual two-layer pointwise MLP of the same width.

Hidden states are [batch, channels, *grid] float64 arrays. Every operation
has an explicit adjoint; ``model_backward`` walks a ``GradientTape`` recorded
by ``model_forward`` and produces exact gradients for all parameters,
including the factors and step size of each low-rank skew generator.
GELU uses the tanh form (scipy's erf is an order of magnitude slower on CPU);
the adjoints differentiate the implemented form exactly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numba
import numpy as np

from .errors import ConfigError, ShapeError
from .numerics import RngStream

_GELU_C0 = 0.7978845608028654  # sqrt(2/pi)
_GELU_C1 = 0.044715

AUGMENTATIONS = ("none", "mcl", "mlp")


# GELU is the hottest elementwise op in training. numpy's SIMD tanh is kept
# for the transcendental; the surrounding polynomial chains are fused into
# single memory passes with numba.
@numba.njit(cache=True)
def _gelu_inner(x):
    out = np.empty_like(x)
    fx = x.ravel()
    fo = out.ravel()
    for i in range(fx.size):
        xi = fx[i]
        fo[i] = _GELU_C0 * (xi + _GELU_C1 * xi * xi * xi)
    return out


@numba.njit(cache=True)
def _gelu_combine(x, t):
    out = np.empty_like(x)
    fx = x.ravel()
    ft = t.ravel()
    fo = out.ravel()
    for i in range(fx.size):
        fo[i] = 0.5 * fx[i] * (1.0 + ft[i])
    return out


@numba.njit(cache=True)
def _gelu_grad_kernel(x, t):
    out = np.empty_like(x)
    fx = x.ravel()
    ft = t.ravel()
    fo = out.ravel()
    for i in range(fx.size):
        xi = fx[i]
        ti = ft[i]
        fo[i] = 0.5 * (1.0 + ti) + 0.5 * xi * (1.0 - ti * ti) * _GELU_C0 * (
            1.0 + 3.0 * _GELU_C1 * xi * xi
        )
    return out


def _gelu_with_cache(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Returns (gelu(x), tanh cache) so the adjoint can skip one tanh."""
    t = np.tanh(_gelu_inner(x))
    return _gelu_combine(x, t), t


def _gelu_grad(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    """d gelu / dx given the cached tanh value t."""
    return _gelu_grad_kernel(x, t)


def gelu(x: np.ndarray) -> np.ndarray:
    """tanh-form GELU: 0.5 x (1 + tanh(c0 (x + c1 x^3)))."""
    x = np.asarray(x, dtype=np.float64)
    t = np.tanh(_gelu_inner(x))
    return _gelu_combine(x, t)


@dataclass
class ModelConfig:
    in_channels: int = 1
    out_channels: int = 1
    width: int = 32
    modes: int = 16
    n_layers: int = 4
    ndim: int = 1
    augmentation: str = "none"
    rank: int = 8
    mlp_hidden: int | None = None  # None: full width
    proj_width: int = 128

    def __post_init__(self):
        if self.augmentation not in AUGMENTATIONS:
            raise ConfigError(f"unknown augmentation {self.augmentation!r}")
        if self.ndim not in (1, 2):
            raise ConfigError("ndim must be 1 or 2")
        if self.n_layers < 1:
            raise ConfigError("n_layers must be >= 1")
        if min(self.in_channels, self.out_channels, self.width, self.modes) < 1:
            raise ConfigError("channel/width/mode counts must be positive")
        if self.augmentation == "mcl" and not 1 <= self.rank <= self.width:
            raise ConfigError(f"rank must satisfy 1 <= r <= width, got {self.rank}")
        if self.mlp_hidden is not None and self.mlp_hidden < 1:
            raise ConfigError("mlp_hidden must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SpectralLayer:
    """Frequency-domain mixing weights plus a pointwise bypass path.

    ``weights`` is complex with shape [modes..., C_in, C_out] (mode-first so
    the application is a stack of small matmuls); ``bypass`` is [C_out, C_in].
    """

    weights: np.ndarray
    bypass: np.ndarray
    bias: np.ndarray

    @property
    def ndim(self) -> int:
        return self.weights.ndim - 2

    @property
    def modes(self) -> tuple[int, ...]:
        return self.weights.shape[: self.ndim]


class OperatorModel:
    """Parameter container; all math lives in the module-level functions."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.params = params

    @classmethod
    def initialize(cls, config: ModelConfig, rng: RngStream) -> "OperatorModel":
        """Seeded init: complex-Gaussian spectral weights scaled by
        1/(C_in*C_out), Kaiming-uniform affines, Gaussian 1/sqrt(C) factors
        and alpha=0.01 for the skew slots. Draw order is fixed, so identical
        (config, stream) pairs produce identical parameters.
        """
        c, ci, co = config.width, config.in_channels, config.out_channels
        m, p = config.modes, config.proj_width
        params: dict[str, np.ndarray] = {}

        def affine(name: str, fan_out: int, fan_in: int):
            bound = 1.0 / np.sqrt(fan_in)
            w = (rng.uniforms(fan_out * fan_in) * 2.0 - 1.0) * bound
            params[f"{name}.weight"] = w.reshape(fan_out, fan_in)
            params[f"{name}.bias"] = (rng.uniforms(fan_out) * 2.0 - 1.0) * bound

        affine("lift", c, ci)
        mode_shape = (m,) * config.ndim
        n_modes = int(np.prod(mode_shape))
        for l in range(config.n_layers):
            scale = 1.0 / (c * c)
            re = rng.gaussians(n_modes * c * c)
            im = rng.gaussians(n_modes * c * c)
            params[f"layer{l}.spectral"] = (
                scale * (re + 1j * im)
            ).reshape(mode_shape + (c, c))
            affine(f"layer{l}.bypass", c, c)
            if config.augmentation == "mcl":
                s = 1.0 / np.sqrt(c)
                params[f"layer{l}.mcl_u"] = rng.gaussians(c * config.rank).reshape(
                    c, config.rank
                ) * s
                params[f"layer{l}.mcl_v"] = rng.gaussians(c * config.rank).reshape(
                    c, config.rank
                ) * s
                params[f"layer{l}.mcl_alpha"] = np.array([0.01])
            elif config.augmentation == "mlp":
                hidden = config.mlp_hidden or c
                affine(f"layer{l}.mlp1", hidden, c)
                affine(f"layer{l}.mlp2", c, hidden)
        affine("proj1", p, c)
        affine("proj2", co, p)
        return cls(config, params)

    def spectral_layer(self, l: int) -> SpectralLayer:
        return SpectralLayer(
            weights=self.params[f"layer{l}.spectral"],
            bypass=self.params[f"layer{l}.bypass.weight"],
            bias=self.params[f"layer{l}.bypass.bias"],
        )

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}


class GradientTape:
    """Per-layer intermediates recorded by a forward pass.

    Replaying the forward from the recorded input reproduces the recorded
    output bit-identically; ``model_backward`` consumes the tape once.
    """

    def __init__(self):
        self.model: OperatorModel | None = None
        self.input: np.ndarray | None = None
        self.layers: list[dict] = []
        self.head: dict = {}


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------


def _channel_map(w: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Pointwise channel mixing: out[b,o,...] = sum_i w[o,i] z[b,i,...]."""
    b = z.shape[0]
    flat = z.reshape(b, z.shape[1], -1)
    out = np.matmul(w, flat)
    return out.reshape((b, w.shape[0]) + z.shape[2:])


def _spectral_apply(layer: SpectralLayer, z: np.ndarray):
    """Truncated-spectrum convolution plus bypass; returns (y, coef).

    ``coef`` is the retained block of the input spectrum, kept for the
    weight adjoint.
    """
    ndim = layer.ndim
    grid = z.shape[2:]
    if len(grid) != ndim:
        raise ShapeError(f"expected {ndim} spatial axes, got shape {z.shape}")
    for n, m in zip(grid, layer.modes):
        if n < 2 * m:
            raise ConfigError(f"grid extent {n} requires at least 2*modes={2 * m}")
    if ndim == 1:
        (m,) = layer.modes
        n = grid[0]
        zh = np.fft.rfft(z, axis=-1)
        coef = np.ascontiguousarray(zh[..., :m])  # [B,C,m]
        mixed = np.matmul(coef.transpose(2, 0, 1), layer.weights)  # [m,B,Co]
        yh = np.zeros(zh.shape[:2] + (n // 2 + 1,), dtype=np.complex128)
        yh[..., :m] = mixed.transpose(1, 2, 0)
        y = np.fft.irfft(yh, n=n, axis=-1)
    else:
        m1, m2 = layer.modes
        n1, n2 = grid
        zh = np.fft.rfft2(z, axes=(-2, -1))
        coef = np.ascontiguousarray(zh[..., :m1, :m2])  # [B,C,m1,m2]
        mixed = np.matmul(coef.transpose(2, 3, 0, 1), layer.weights)  # [m1,m2,B,Co]
        yh = np.zeros(zh.shape[:2] + (n1, n2 // 2 + 1), dtype=np.complex128)
        yh[..., :m1, :m2] = mixed.transpose(2, 3, 0, 1)
        y = np.fft.irfft2(yh, s=(n1, n2), axes=(-2, -1))
    y += _channel_map(layer.bypass, z)
    y += layer.bias.reshape((1, -1) + (1,) * ndim)
    return y, coef


def spectral_conv_forward(layer: SpectralLayer, z: np.ndarray) -> np.ndarray:
    """One spectral layer on [B, C_in, *grid] input; real output enforced by
    the Hermitian inverse transform."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 + layer.ndim:
        raise ShapeError(f"expected [batch, channels, grid...], got {z.shape}")
    if z.shape[1] != layer.bypass.shape[1]:
        raise ShapeError(
            f"input has {z.shape[1]} channels, layer expects {layer.bypass.shape[1]}"
        )
    y, _ = _spectral_apply(layer, z)
    return y


def _mcl_apply(u, v, alpha, a):
    """Slot forward a + alpha*(u v^T - v u^T) a; returns intermediates."""
    b = a.shape[0]
    flat = a.reshape(b, a.shape[1], -1)
    p = np.matmul(v.T, flat)
    q = np.matmul(u.T, flat)
    az = (np.matmul(u, p) - np.matmul(v, q)).reshape(a.shape)
    return a + alpha * az, p, q, az


def model_forward(
    model: OperatorModel, u: np.ndarray, tape: GradientTape | None = None
) -> np.ndarray:
    """Full forward pass on [batch, in_channels, *grid] input."""
    cfg = model.config
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2 + cfg.ndim:
        raise ShapeError(
            f"expected [batch, channels, {'x'.join(['grid'] * cfg.ndim)}], got {u.shape}"
        )
    if u.shape[1] != cfg.in_channels:
        raise ShapeError(f"input has {u.shape[1]} channels, model expects {cfg.in_channels}")
    params = model.params
    if tape is not None:
        tape.model = model
        tape.input = u.copy()
        tape.layers = []

    bias_shape = (1, -1) + (1,) * cfg.ndim
    z = _channel_map(params["lift.weight"], u) + params["lift.bias"].reshape(bias_shape)
    for l in range(cfg.n_layers):
        rec: dict = {}
        layer = model.spectral_layer(l)
        if tape is not None:
            rec["z_in"] = z
        y, coef = _spectral_apply(layer, z)
        a, t_act = _gelu_with_cache(y)
        if tape is not None:
            rec.update(coef=coef, y=y, t_act=t_act, a=a)
        if cfg.augmentation == "mcl":
            alpha = float(params[f"layer{l}.mcl_alpha"][0])
            z, p, q, az = _mcl_apply(
                params[f"layer{l}.mcl_u"], params[f"layer{l}.mcl_v"], alpha, a
            )
            if tape is not None:
                rec.update(p=p, q=q, az=az)
        elif cfg.augmentation == "mlp":
            h_pre = _channel_map(params[f"layer{l}.mlp1.weight"], a) + params[
                f"layer{l}.mlp1.bias"
            ].reshape(bias_shape)
            h, t_mlp = _gelu_with_cache(h_pre)
            z = (
                a
                + _channel_map(params[f"layer{l}.mlp2.weight"], h)
                + params[f"layer{l}.mlp2.bias"].reshape(bias_shape)
            )
            if tape is not None:
                rec.update(h_pre=h_pre, t_mlp=t_mlp, h=h)
        else:
            z = a
        if tape is not None:
            tape.layers.append(rec)

    p1 = _channel_map(params["proj1.weight"], z) + params["proj1.bias"].reshape(bias_shape)
    h, t_head = _gelu_with_cache(p1)
    out = _channel_map(params["proj2.weight"], h) + params["proj2.bias"].reshape(bias_shape)
    if tape is not None:
        tape.head = {"z_out": z, "p1": p1, "t_head": t_head, "h": h, "out": out}
    return out


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def _affine_adjoint(w: np.ndarray, x: np.ndarray, g: np.ndarray):
    """Adjoints of out = w x + bias: returns (dw, dbias, dx)."""
    b = x.shape[0]
    xf = x.reshape(b, x.shape[1], -1)
    gf = g.reshape(b, g.shape[1], -1)
    dw = np.matmul(gf, xf.transpose(0, 2, 1)).sum(axis=0)
    dbias = gf.sum(axis=(0, 2))
    dx = np.matmul(w.T, gf).reshape(x.shape)
    return dw, dbias, dx


def _spectral_adjoint(layer: SpectralLayer, coef: np.ndarray, z_in: np.ndarray, g: np.ndarray):
    """Adjoints of the spectral layer; returns (d_weights, d_bypass, d_bias, dz).

    The retained bins of the last (half-spectrum) axis carry weight 2 except
    k=0, matching the energy duplication of the Hermitian-symmetric modes.
    """
    ndim = layer.ndim
    grid = z_in.shape[2:]
    n_total = int(np.prod(grid))
    if ndim == 1:
        (m,) = layer.modes
        n = grid[0]
        w_last = np.ones(m)
        w_last[1:] = 2.0
        gh = np.fft.rfft(g, axis=-1)[..., :m] * (w_last / n_total)
        # d_weights[k,i,o] = sum_b conj(coef[b,i,k]) gh[b,o,k]
        dw = np.matmul(coef.conj().transpose(2, 1, 0), gh.transpose(2, 0, 1))
        gcoef = np.matmul(gh.transpose(2, 0, 1), layer.weights.conj().transpose(0, 2, 1))
        gcoef = gcoef.transpose(1, 2, 0)  # [B,Ci,m]
        pad = np.zeros(g.shape[:1] + (z_in.shape[1], n // 2 + 1), dtype=np.complex128)
        pad[..., :m] = gcoef / w_last
        dz = n_total * np.fft.irfft(pad, n=n, axis=-1)
    else:
        m1, m2 = layer.modes
        n1, n2 = grid
        w_last = np.ones(m2)
        w_last[1:] = 2.0
        gh = np.fft.rfft2(g, axes=(-2, -1))[..., :m1, :m2] * (w_last / n_total)
        dw = np.matmul(coef.conj().transpose(2, 3, 1, 0), gh.transpose(2, 3, 0, 1))
        gcoef = np.matmul(
            gh.transpose(2, 3, 0, 1), layer.weights.conj().transpose(0, 1, 3, 2)
        ).transpose(2, 3, 0, 1)
        pad = np.zeros(g.shape[:1] + (z_in.shape[1], n1, n2 // 2 + 1), dtype=np.complex128)
        pad[..., :m1, :m2] = gcoef / w_last
        dz = n_total * np.fft.irfft2(pad, s=(n1, n2), axes=(-2, -1))
    d_bypass, d_bias, dz_bypass = _affine_adjoint(layer.bypass, z_in, g)
    return dw, d_bypass, d_bias, dz + dz_bypass


def model_backward(
    model: OperatorModel, tape: GradientTape, loss_grad: np.ndarray
) -> dict[str, np.ndarray]:
    """Exact reverse-mode gradients for every parameter.

    ``loss_grad`` is dL/d(output) with the output's shape. The tape must come
    from a matching forward pass on this model.
    """
    if tape.model is not model:
        raise ConfigError("gradient tape was recorded by a different model")
    if not tape.head:
        raise ConfigError("gradient tape is empty; run model_forward with tape first")
    cfg = model.config
    params = model.params
    g = np.asarray(loss_grad, dtype=np.float64)
    if g.shape != tape.head["out"].shape:
        raise ShapeError(
            f"loss gradient shape {g.shape} does not match output {tape.head['out'].shape}"
        )
    grads: dict[str, np.ndarray] = {}

    head = tape.head
    dw2, db2, gh = _affine_adjoint(params["proj2.weight"], head["h"], g)
    grads["proj2.weight"], grads["proj2.bias"] = dw2, db2
    gp1 = gh * _gelu_grad(head["p1"], head["t_head"])
    dw1, db1, gz = _affine_adjoint(params["proj1.weight"], head["z_out"], gp1)
    grads["proj1.weight"], grads["proj1.bias"] = dw1, db1

    for l in range(cfg.n_layers - 1, -1, -1):
        rec = tape.layers[l]
        if cfg.augmentation == "mcl":
            u, v = params[f"layer{l}.mcl_u"], params[f"layer{l}.mcl_v"]
            alpha = float(params[f"layer{l}.mcl_alpha"][0])
            a = rec["a"]
            b = a.shape[0]
            gf = gz.reshape(b, gz.shape[1], -1)
            af = a.reshape(b, a.shape[1], -1)
            # dL/d alpha = <g, A a>
            grads[f"layer{l}.mcl_alpha"] = np.array([float(np.vdot(gz, rec["az"]))])
            vtg = np.matmul(v.T, gf)
            utg = np.matmul(u.T, gf)
            # dL/dU = alpha (sum_b g p^T - a (V^T g)^T), dL/dV symmetric
            du = alpha * (
                np.matmul(gf, rec["p"].transpose(0, 2, 1)).sum(axis=0)
                - np.matmul(af, vtg.transpose(0, 2, 1)).sum(axis=0)
            )
            dv = alpha * (
                np.matmul(af, utg.transpose(0, 2, 1)).sum(axis=0)
                - np.matmul(gf, rec["q"].transpose(0, 2, 1)).sum(axis=0)
            )
            grads[f"layer{l}.mcl_u"], grads[f"layer{l}.mcl_v"] = du, dv
            # dL/da = g + alpha A^T g = g - alpha A g
            ga = gz - alpha * (np.matmul(u, vtg) - np.matmul(v, utg)).reshape(gz.shape)
        elif cfg.augmentation == "mlp":
            dw2m, db2m, ghm = _affine_adjoint(params[f"layer{l}.mlp2.weight"], rec["h"], gz)
            grads[f"layer{l}.mlp2.weight"], grads[f"layer{l}.mlp2.bias"] = dw2m, db2m
            ghp = ghm * _gelu_grad(rec["h_pre"], rec["t_mlp"])
            dw1m, db1m, ga_mlp = _affine_adjoint(params[f"layer{l}.mlp1.weight"], rec["a"], ghp)
            grads[f"layer{l}.mlp1.weight"], grads[f"layer{l}.mlp1.bias"] = dw1m, db1m
            ga = gz + ga_mlp
        else:
            ga = gz
        gy = ga * _gelu_grad(rec["y"], rec["t_act"])
        layer = model.spectral_layer(l)
        dw, d_byp, d_bias, gz = _spectral_adjoint(layer, rec["coef"], rec["z_in"], gy)
        grads[f"layer{l}.spectral"] = dw
        grads[f"layer{l}.bypass.weight"] = d_byp
        grads[f"layer{l}.bypass.bias"] = d_bias

    dwl, dbl, _ = _affine_adjoint(params["lift.weight"], tape.input, gz)
    grads["lift.weight"], grads["lift.bias"] = dwl, dbl
    return grads


# ---------------------------------------------------------------------------
# bookkeeping
# ---------------------------------------------------------------------------


def param_count(model: OperatorModel) -> tuple[int, dict[str, int]]:
    """Closed-form parameter count with a per-component breakdown.

    Complex spectral weights count as two reals each. The augmentation
    overhead is L*(2*C*r + 1) for the skew slots and L*(2*C^2 + 2*C) for the
    MLP slots.
    """
    cfg = model.config
    c, ci, co, p, L = cfg.width, cfg.in_channels, cfg.out_channels, cfg.proj_width, cfg.n_layers
    n_modes = cfg.modes**cfg.ndim
    breakdown = {
        "lift": c * ci + c,
        "spectral": L * 2 * n_modes * c * c,
        "bypass": L * (c * c + c),
        "projection": (p * c + p) + (co * p + co),
    }
    if cfg.augmentation == "mcl":
        breakdown["augmentation"] = L * (2 * c * cfg.rank + 1)
    elif cfg.augmentation == "mlp":
        hidden = cfg.mlp_hidden or c
        breakdown["augmentation"] = L * (c * hidden + hidden + hidden * c + c)
    else:
        breakdown["augmentation"] = 0
    total = sum(breakdown.values())
    actual = sum(
        v.size * (2 if np.iscomplexobj(v) else 1) for v in model.params.values()
    )
    if total != actual:
        raise ConfigError(
            f"parameter accounting mismatch: formula {total} vs arrays {actual}"
        )
    return total, breakdown


def downsample(u: np.ndarray, factor: int, axes: tuple[int, ...] = (-1,)) -> np.ndarray:
    """Strided subsampling: keep every factor-th point along ``axes``."""
    u = np.asarray(u)
    if factor < 1:
        raise ConfigError("downsample factor must be >= 1")
    if factor == 1:
        return u
    index: list = [slice(None)] * u.ndim
    for ax in axes:
        if u.shape[ax] % factor != 0:
            raise ShapeError(
                f"axis {ax} extent {u.shape[ax]} is not divisible by {factor}"
            )
        index[ax] = slice(None, None, factor)
    return u[tuple(index)]
