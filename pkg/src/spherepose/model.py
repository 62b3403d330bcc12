"""Trainable pose model: small conv encoder, sphere projection, group convs.

Pipeline: image -> two stride-2 3x3 convs with ReLU -> orthographic
projection to band-limited sphere coefficients -> S^2 group conv ->
(spatial ReLU -> SO(3) group conv) x n -> single-channel SO(3) signal
whose values at the query grid are the classification logits.

All gradients are analytic reverse mode; every stage is a linear map, a
bilinear interpolation, or a ReLU mask, so the finite-difference check in
the tests is authoritative. Parameters live in an ordered dict and are
serialized in declaration order.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import harmonics as hm
from . import layers as ly
from . import projection as pj
from .grids import SO3Grid, healpix_so3, quadrature_so3

__all__ = ["ModelConfig", "Model", "count_parameters"]

CHECKPOINT_MAGIC = b"I2SC"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    band_limit: int = 6
    channels: int = 8  # output channels of the S^2 conv
    n_so3_convs: int = 1
    projection: str = "spatial"  # or "fourier"
    s2_filter_mode: str = "fourier"  # or "spatial"
    proj_recursion: int = 2
    n_keep: int = 20
    grid_recursion: int = 3  # query grid for training logits
    filter_grid_recursion: int = 3  # tap locations of SO(3) filters
    support_angle_deg: float = 22.5
    image_size: int = 32
    encoder_channels: tuple = (16, 32)
    final_filter_scale: float = 0.01
    dtype: str = "float32"  # precision of the large basis matmuls only

    def __post_init__(self):
        if self.projection not in ("spatial", "fourier"):
            raise ValueError(f"unknown projection variant {self.projection!r}")
        if self.s2_filter_mode not in ("fourier", "spatial"):
            raise ValueError(f"unknown s2 filter mode {self.s2_filter_mode!r}")
        if self.n_so3_convs not in (0, 1, 2):
            raise ValueError("n_so3_convs must be 0, 1, or 2")
        if self.band_limit < 1:
            raise ValueError("band limit must be at least 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        self.encoder_channels = tuple(self.encoder_channels)

    @property
    def feature_hw(self) -> int:
        return self.image_size // 4  # two stride-2 convs

    def to_json(self) -> str:
        d = asdict(self)
        d["encoder_channels"] = list(self.encoder_channels)
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls(**json.loads(text))


# ---------------------------------------------------------------------------
# stride-2 3x3 convolution, pad 1


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """(B, C, H, W) -> (B, O, H//2, W//2); returns (out, cache)."""
    B, C, H, W = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    Ho, Wo = H // 2, W // 2
    out = np.broadcast_to(b[:, None, None], (B, len(b), Ho, Wo)).copy()
    for ki in range(3):
        for kj in range(3):
            patch = xp[:, :, ki : ki + 2 * Ho : 2, kj : kj + 2 * Wo : 2]
            out += np.einsum("oc,bcyx->boyx", w[:, :, ki, kj], patch)
    return out, (xp, w, (B, C, H, W))


def conv2d_backward(dout: np.ndarray, cache):
    xp, w, (B, C, H, W) = cache
    Ho, Wo = H // 2, W // 2
    dw = np.zeros_like(w)
    dxp = np.zeros_like(xp)
    for ki in range(3):
        for kj in range(3):
            patch = xp[:, :, ki : ki + 2 * Ho : 2, kj : kj + 2 * Wo : 2]
            dw[:, :, ki, kj] = np.einsum("boyx,bcyx->oc", dout, patch)
            dxp[:, :, ki : ki + 2 * Ho : 2, kj : kj + 2 * Wo : 2] += np.einsum(
                "oc,boyx->bcyx", w[:, :, ki, kj], dout
            )
    db = dout.sum(axis=(0, 2, 3))
    return dxp[:, :, 1:-1, 1:-1], dw, db


def _mm(batched: np.ndarray, mat: np.ndarray) -> np.ndarray:
    """(B, C, k) @ (k, n) as one flat GEMM; stacked matmul is far slower."""
    B, C, k = batched.shape
    return (batched.reshape(B * C, k) @ mat).reshape(B, C, -1)


class Model:
    """Parameter container plus forward/backward passes."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        c = config
        L = c.band_limit
        e1, e2 = c.encoder_channels
        hw = c.feature_hw

        self.proj_config = pj.ProjectionConfig(
            recursion=c.proj_recursion,
            n_keep=c.n_keep,
            band_limit=L,
            eval_mode=False,
        )
        self.projector = pj.get_projector(self.proj_config)
        self.grid: SO3Grid = healpix_so3(c.grid_recursion)
        self.relu_quad = quadrature_so3(2 * L)
        self.dtype = np.float32 if c.dtype == "float32" else np.float64
        fwd, bwd = ly.relu_tables(self.relu_quad, L)
        self._relu_fwd = fwd.astype(self.dtype)
        self._relu_bwd = bwd.astype(self.dtype)

        filter_grid = healpix_so3(c.filter_grid_recursion)
        support = np.radians(c.support_angle_deg)

        d2 = hm.n_s2_coeffs(L)
        self.params: dict[str, np.ndarray] = {}
        p = self.params
        p["conv1_w"] = rng.standard_normal((e1, 3, 3, 3)) * np.sqrt(2.0 / (3 * 9))
        p["conv1_b"] = np.zeros(e1)
        p["conv2_w"] = rng.standard_normal((e2, e1, 3, 3)) * np.sqrt(2.0 / (e1 * 9))
        p["conv2_b"] = np.zeros(e2)
        if c.projection == "fourier":
            p["proj_w"] = rng.standard_normal((e2, d2, hw * hw)) / np.sqrt(hw * hw)

        s2_out = c.channels if c.n_so3_convs > 0 else 1
        s2f = ly.S2Filter.random(
            rng,
            e2,
            s2_out,
            L,
            mode=c.s2_filter_mode,
            grid=self.projector.grid if c.s2_filter_mode == "spatial" else None,
        )
        self._s2_grid = s2f.grid
        p["s2_filter"] = s2f.weights
        if c.n_so3_convs == 0:
            p["s2_filter"] = p["s2_filter"] * c.final_filter_scale

        self._so3_support: list[np.ndarray] = []
        self._so3_dirac: list[np.ndarray] = []
        chans = [c.channels] * max(0, c.n_so3_convs - 1) + [1]
        prev = c.channels
        for i in range(c.n_so3_convs):
            f = ly.SO3Filter.random(rng, prev, chans[i], L, filter_grid, support)
            if i == c.n_so3_convs - 1:
                f.values *= c.final_filter_scale
            p[f"so3_filter_{i}"] = f.values
            self._so3_support.append(f.support_quats)
            self._so3_dirac.append(f._dirac_basis())
            prev = chans[i]

    # -- filter views ------------------------------------------------------

    def s2_filter(self) -> ly.S2Filter:
        return ly.S2Filter(
            self.config.s2_filter_mode,
            self.params["s2_filter"],
            self.config.band_limit,
            self._s2_grid,
        )

    def so3_filter(self, i: int) -> ly.SO3Filter:
        return ly.SO3Filter(
            self.params[f"so3_filter_{i}"],
            self._so3_support[i],
            np.radians(self.config.support_angle_deg),
            self.config.band_limit,
        )

    # -- passes --------------------------------------------------------

    def forward(self, images: np.ndarray, rng: np.random.Generator | None = None):
        """(B, 3, H, W) -> (logits (B, n_grid), cache).

        rng drives projection dropout; None means the fixed eval mask.
        """
        sig, cache = self.forward_coeffs(images, rng)
        basis = _train_basis(self.grid, self.config.band_limit, self.dtype)
        logits = sig[:, 0] @ basis.T
        return logits.astype(np.float64), cache

    def forward_coeffs(
        self, images: np.ndarray, rng: np.random.Generator | None = None
    ):
        """Final single-channel SO(3) coefficients (B, 1, n_coeffs) and cache.

        Evaluation against grids other than the training grid starts here;
        forward() adds the training-grid readout on top.
        """
        c = self.config
        L = c.band_limit
        p = self.params
        x = np.asarray(images, dtype=np.float64)
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != c.image_size:
            raise ValueError(
                f"expected (batch, 3, {c.image_size}, {c.image_size}) images"
            )
        B = len(x)
        cache: dict = {}

        h1, cache["conv1"] = conv2d_forward(x, p["conv1_w"], p["conv1_b"])
        m1 = h1 > 0
        h2, cache["conv2"] = conv2d_forward(h1 * m1, p["conv2_w"], p["conv2_b"])
        m2 = h2 > 0
        fm = h2 * m2
        cache["masks"] = (m1, m2)

        if c.projection == "fourier":
            flat = fm.reshape(B, fm.shape[1], -1)
            coeffs = np.einsum("bcf,cdf->bcd", flat, p["proj_w"])
            cache["proj"] = flat
        else:
            masks = np.stack(
                [self.projector.sample_mask(rng) for _ in range(B)]
            )
            coeffs, cache["proj"] = self.projector.forward(fm, masks)

        psi2 = self.s2_filter().coefficients()
        sig = ly.s2_conv_arrays(coeffs, psi2, L).astype(self.dtype)
        cache["s2"] = (coeffs, psi2)

        cache["so3"] = []
        for i in range(c.n_so3_convs):
            vals = _mm(sig, self._relu_fwd)
            mask = vals > 0
            act = _mm(vals * mask, self._relu_bwd)
            psi3 = self._so3_dirac[i]
            fc = (self.params[f"so3_filter_{i}"] @ psi3).astype(self.dtype)
            out = ly.so3_conv_arrays(act, fc, L)
            cache["so3"].append((sig, mask, act, psi3, fc))
            sig = out

        cache["final"] = sig
        return sig, cache

    def backward(self, cache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients for every parameter given dLoss/dLogits."""
        c = self.config
        L = c.band_limit
        p = self.params
        grads: dict[str, np.ndarray] = {}

        basis = _train_basis(self.grid, L, self.dtype)
        dsig = (dlogits.astype(self.dtype) @ basis)[:, None, :]

        for i in reversed(range(c.n_so3_convs)):
            sig_in, mask, act, psi3, fc = cache["so3"][i]
            dact, dfc = ly.so3_conv_backward_arrays(dsig, act, fc, L)
            grads[f"so3_filter_{i}"] = (dfc.astype(np.float64)) @ psi3.T
            dvals = _mm(dact, self._relu_bwd.T) * mask
            dsig = _mm(dvals, self._relu_fwd.T)

        coeffs, psi2 = cache["s2"]
        dcoeffs, dpsi2 = ly.s2_conv_backward_arrays(
            dsig.astype(np.float64), coeffs, psi2, L
        )
        grads["s2_filter"] = self.s2_filter().coefficients_backward(dpsi2)

        if c.projection == "fourier":
            flat = cache["proj"]
            grads["proj_w"] = np.einsum("bcd,bcf->cdf", dcoeffs, flat)
            dfm = np.einsum("bcd,cdf->bcf", dcoeffs, p["proj_w"]).reshape(
                len(flat), flat.shape[1], c.feature_hw, c.feature_hw
            )
        else:
            dfm = self.projector.backward(dcoeffs, cache["proj"])

        m1, m2 = cache["masks"]
        dh1, grads["conv2_w"], grads["conv2_b"] = conv2d_backward(
            dfm * m2, cache["conv2"]
        )
        _, grads["conv1_w"], grads["conv1_b"] = conv2d_backward(
            dh1 * m1, cache["conv1"]
        )
        return grads

    # -- serialization -------------------------------------------------

    def save(self, path) -> None:
        blob = self.config.to_json().encode()
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(np.uint32(CHECKPOINT_VERSION).tobytes())
            fh.write(np.uint32(len(blob)).tobytes())
            fh.write(blob)
            for name, arr in self.params.items():
                fh.write(arr.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "Model":
        with open(path, "rb") as fh:
            raw = fh.read()
        if raw[:4] != CHECKPOINT_MAGIC:
            raise ValueError("not a model checkpoint (bad magic)")
        version = int(np.frombuffer(raw, "<u4", 1, 4)[0])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        blob_len = int(np.frombuffer(raw, "<u4", 1, 8)[0])
        config = ModelConfig.from_json(raw[12 : 12 + blob_len].decode())
        model = cls(config, np.random.default_rng(0))
        off = 12 + blob_len
        for name, arr in model.params.items():
            flat = np.frombuffer(raw, "<f8", arr.size, off).reshape(arr.shape)
            model.params[name] = flat.copy()
            off += arr.size * 8
        if off != len(raw):
            raise ValueError("checkpoint size does not match its config")
        return model

    def n_parameters(self) -> int:
        return sum(a.size for a in self.params.values())


_train_basis_cache: dict[tuple, np.ndarray] = {}


def _train_basis(grid: SO3Grid, L: int, dtype=np.float64) -> np.ndarray:
    key = (grid.recursion, len(grid), L, np.dtype(dtype).str)
    if key not in _train_basis_cache:
        B = hm.so3_basis(grid.alpha, grid.beta, grid.gamma, L, dtype=dtype)
        _train_basis_cache[key] = B
    return _train_basis_cache[key]


def count_parameters(config: ModelConfig) -> int:
    """Closed-form trainable scalar count for a config."""
    c = config
    e1, e2 = c.encoder_channels
    d2 = hm.n_s2_coeffs(c.band_limit)
    n = e1 * 3 * 9 + e1 + e2 * e1 * 9 + e2
    if c.projection == "fourier":
        n += e2 * d2 * c.feature_hw**2
    s2_out = c.channels if c.n_so3_convs > 0 else 1
    if c.s2_filter_mode == "fourier":
        n += e2 * s2_out * d2
    else:
        from .grids import healpix_s2, hemisphere

        n += e2 * s2_out * len(hemisphere(healpix_s2(c.proj_recursion)))
    if c.n_so3_convs:
        grid = healpix_so3(c.filter_grid_recursion)
        k = len(ly.SO3Filter.support_of(grid, np.radians(c.support_angle_deg)))
        chans = [c.channels] * (c.n_so3_convs - 1) + [1]
        prev = c.channels
        for out in chans:
            n += prev * out * k
            prev = out
    return n
