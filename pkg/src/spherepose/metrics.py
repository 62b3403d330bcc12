"""Evaluation: rotation-error metrics, log-likelihood, grid evaluation.

Per-sample rotation error is the geodesic distance to the nearest member
of the sample's symmetry-equivalent label set; single-element sets reduce
to the plain pose error. Log densities are cell probability over cell
volume pi^2/N, matching the training head.

evaluate() scores a model against an arbitrary-resolution rotation grid.
Grids up to 2^17 cells are materialized; larger ones (recursion 4 and 5)
are streamed in chunks with one Wigner evaluation per iso-latitude ring,
using online log-sum-exp and running-argmax accumulators.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import harmonics as hm
from . import head as hd
from . import rotations as rot
from .grids import SO3Grid, healpix_so3, nearest_index
from .model import Model
from .solids import SolidDataset

__all__ = [
    "ShapeMetrics",
    "EvalReport",
    "point_metrics",
    "evaluate",
    "avg_log_likelihood",
]

EVAL_CHUNK = 1 << 16
MATERIALIZE_LIMIT = 1 << 17


def point_metrics(
    predictions: np.ndarray, label_sets: list[np.ndarray]
) -> tuple[float, float, float]:
    """(median error degrees, Acc@15, Acc@30) over min-over-set errors."""
    predictions = np.asarray(predictions, dtype=np.float64)
    if len(predictions) == 0 or len(predictions) != len(label_sets):
        raise ValueError("need equally many predictions and label sets, > 0")
    errors = np.array(
        [
            rot.geodesic_distance(p, np.atleast_2d(s)).min()
            for p, s in zip(predictions, label_sets)
        ]
    )
    deg = np.degrees(errors)
    return float(np.median(deg)), float((deg <= 15).mean()), float((deg <= 30).mean())


@dataclass
class ShapeMetrics:
    n: int
    med_err_deg: float
    acc15: float
    acc30: float
    avg_log_lik: float

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError("metrics need at least one sample")
        if not 0.0 <= self.acc15 <= self.acc30 <= 1.0:
            raise ValueError("accuracies must satisfy 0 <= Acc@15 <= Acc@30 <= 1")
        if not 0.0 <= self.med_err_deg <= 180.0:
            raise ValueError("median error must lie in [0, 180] degrees")


@dataclass
class EvalReport:
    shapes: dict[str, ShapeMetrics]
    aggregate: ShapeMetrics
    config: dict

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        raw = json.loads(text)
        return cls(
            shapes={k: ShapeMetrics(**v) for k, v in raw["shapes"].items()},
            aggregate=ShapeMetrics(**raw["aggregate"]),
            config=raw["config"],
        )


def _chunk_basis(grid: SO3Grid, lo: int, hi: int, L: int) -> np.ndarray:
    return hm.so3_basis(
        grid.alpha[lo:hi],
        grid.beta[lo:hi],
        grid.gamma[lo:hi],
        L,
        unique_beta=grid.ring_beta,
        beta_index=grid.ring_index[lo:hi],
    )


def _stream_scores(coeffs: np.ndarray, grid: SO3Grid, support_offset=None):
    """Online (logsumexp, argmax index) per sample; optional support count.

    coeffs: (B, T). Support counts cells with logit > logsumexp + offset
    and costs a second streaming pass, since the threshold is only known
    once the normalizer is complete.
    """
    L = hm.band_limit_for(coeffs.shape[1])
    B = len(coeffs)
    n = len(grid)
    if n <= MATERIALIZE_LIMIT:
        logits = coeffs @ hd.grid_basis(grid, L).T
        lse = np.logaddexp.reduce(logits, axis=1)
        best = logits.argmax(axis=1)
        support = None
        if support_offset is not None:
            support = (logits > (lse + support_offset)[:, None]).sum(axis=1)
        return lse, best, support

    m = np.full(B, -np.inf)
    s = np.zeros(B)
    best_val = np.full(B, -np.inf)
    best = np.zeros(B, dtype=np.int64)
    for lo in range(0, n, EVAL_CHUNK):
        hi = min(lo + EVAL_CHUNK, n)
        logits = _chunk_basis(grid, lo, hi, L) @ coeffs.T  # (chunk, B)
        cmax = logits.max(axis=0)
        m_new = np.maximum(m, cmax)
        s = s * np.exp(m - m_new) + np.exp(logits - m_new).sum(axis=0)
        m = m_new
        ci = logits.argmax(axis=0)
        cv = logits[ci, np.arange(B)]
        better = cv > best_val  # strict: earliest index wins ties
        best_val[better] = cv[better]
        best[better] = lo + ci[better]
    lse = m + np.log(s)
    support = None
    if support_offset is not None:
        support = np.zeros(B, dtype=np.int64)
        thresh = lse + support_offset
        for lo in range(0, n, EVAL_CHUNK):
            hi = min(lo + EVAL_CHUNK, n)
            logits = _chunk_basis(grid, lo, hi, L) @ coeffs.T
            support += (logits > thresh[None, :]).sum(axis=0)
    return lse, best, support


def _cell_logits(coeff: np.ndarray, grid: SO3Grid, cells: np.ndarray) -> np.ndarray:
    """One signal's values at selected grid cells."""
    L = hm.band_limit_for(len(coeff))
    basis = hm.so3_basis(
        grid.alpha[cells],
        grid.beta[cells],
        grid.gamma[cells],
        L,
        unique_beta=grid.ring_beta,
        beta_index=grid.ring_index[cells],
    )
    return basis @ coeff


def evaluate(
    model: Model,
    dataset: SolidDataset,
    *,
    grid_recursion: int = 5,
    batch_size: int = 128,
    support_factor: float | None = None,
) -> tuple[EvalReport, dict]:
    """Score a model on an eval split; returns (report, per-sample arrays).

    The per-sample dict has err_deg, log_lik, pred (argmax quaternions),
    lse, and, when support_factor is given, support: the number of grid
    cells whose probability exceeds support_factor times uniform.
    """
    if dataset.split != "eval" or not dataset.equivalents:
        raise ValueError("evaluation needs an eval split with equivalent sets")
    grid = healpix_so3(grid_recursion)
    N = len(grid)
    offset = None if support_factor is None else float(np.log(support_factor / N))
    log_vol = float(np.log(N / np.pi**2))
    floor = float(np.log(hd.PROB_FLOOR))

    n = len(dataset)
    lse = np.empty(n)
    pred_idx = np.empty(n, dtype=np.int64)
    support = np.empty(n, dtype=np.int64) if support_factor is not None else None
    log_lik = np.empty(n)

    eq_cells = [nearest_index(grid, eq) for eq in dataset.equivalents]

    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        sig, _ = model.forward_coeffs(dataset.images[lo:hi], None)
        coeffs = sig[:, 0].astype(np.float64)
        b_lse, b_best, b_support = _stream_scores(coeffs, grid, offset)
        lse[lo:hi] = b_lse
        pred_idx[lo:hi] = b_best
        if support is not None:
            support[lo:hi] = b_support
        for i in range(lo, hi):
            vals = _cell_logits(coeffs[i - lo], grid, eq_cells[i])
            ll = np.maximum(vals - b_lse[i - lo], floor) + log_vol
            log_lik[i] = ll.mean()

    pred = grid.quats[pred_idx]
    med, acc15, acc30 = point_metrics(pred, dataset.equivalents)
    metrics = ShapeMetrics(
        n=n,
        med_err_deg=med,
        acc15=acc15,
        acc30=acc30,
        avg_log_lik=float(log_lik.mean()),
    )
    report = EvalReport(
        shapes={dataset.shape_name: metrics},
        aggregate=metrics,
        config={
            "model": json.loads(model.config.to_json()),
            "grid_recursion": grid_recursion,
            "dataset": {"shape": dataset.shape_name, "n": n, "split": dataset.split},
        },
    )
    details = {"err_deg": None, "log_lik": log_lik, "pred": pred, "lse": lse}
    errors = np.array(
        [
            rot.geodesic_distance(p, np.atleast_2d(s)).min()
            for p, s in zip(pred, dataset.equivalents)
        ]
    )
    details["err_deg"] = np.degrees(errors)
    if support is not None:
        details["support"] = support
    return report, details


def avg_log_likelihood(
    model: Model, dataset: SolidDataset, *, grid_recursion: int = 5
) -> float:
    """Mean over samples of mean log density over the equivalent set."""
    report, _ = evaluate(model, dataset, grid_recursion=grid_recursion)
    return report.aggregate.avg_log_lik
