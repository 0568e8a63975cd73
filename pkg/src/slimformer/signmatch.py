"""Sign-matching attention: linear-time key selection.

Keys are scored by the Hamming distance between their sign pattern and a
majority-vote representative sign vector built from the queries; only the
top-K keys enter the softmax. Scoring touches each matrix entry once, so
the score stage is linear in sequence length instead of quadratic.

Sign convention: an entry counts as positive only when strictly > 0, so
sign(0) = -1 throughout (zero weights occur in test fixtures).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PlanError
from .tensor import (Tensor, add, gather_rows, matmul, mul, softmax_rows,
                     transpose_last)

MASK_NEG = -1e9


@dataclass
class OpCounter:
    """Instrumentation for the linear-scoring contract.

    score_stage counts the key-side work (sign extraction + Hamming
    comparisons); rep_sign counts building the query-side representative.
    starved_queries counts causal rows left with no visible key.
    """

    rep_sign: int = 0
    sign_extract: int = 0
    hamming: int = 0
    starved_queries: int = 0

    @property
    def score_stage(self) -> int:
        return self.sign_extract + self.hamming

    @property
    def total(self) -> int:
        return self.rep_sign + self.score_stage

    def reset(self):
        self.rep_sign = self.sign_extract = self.hamming = self.starved_queries = 0


@dataclass(frozen=True)
class SignMatchConfig:
    k: int
    causal: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise PlanError("sign-match k must be >= 1")


def representative_sign(query: np.ndarray, counter: OpCounter | None = None) -> np.ndarray:
    """Majority sign of each query column: +1 when at least half the rows
    are strictly positive (ties resolve to +1), else -1."""
    q = np.asarray(query, dtype=np.float64)
    n, d = q.shape
    counts = (q > 0).sum(axis=0)
    if counter is not None:
        counter.rep_sign += n * d
    return np.where(counts >= n / 2, 1, -1).astype(np.int64)


def score_keys(key: np.ndarray, val: np.ndarray, counter: OpCounter | None = None) -> np.ndarray:
    """Hamming distance between each key row's sign pattern and the
    representative vector."""
    k = np.asarray(key, dtype=np.float64)
    n, d = k.shape
    if val.shape != (d,):
        raise ValueError(f"sign vector length {val.shape} does not match key width {d}")
    signs = np.where(k > 0, 1, -1)
    if counter is not None:
        counter.sign_extract += n * d
        counter.hamming += n * d
    return (signs != val).sum(axis=1).astype(np.int64)


def select_topk(distances, k: int) -> list[int]:
    """Indices of the k smallest distances, ties broken by ascending index."""
    dist = np.asarray(distances)
    n = dist.shape[0]
    if k > n:
        raise PlanError(f"cannot select {k} keys from {n}")
    order = np.lexsort((np.arange(n), dist))
    return [int(i) for i in order[:k]]


def causal_select(distances, n: int, k: int) -> list[int]:
    """Two-phase top-k for causal attention: ceil(k/4) best keys from the
    earliest quarter of positions first, then the best remaining keys
    overall, so early queries are unlikely to be left without visible keys."""
    dist = np.asarray(distances)
    if n != dist.shape[0]:
        raise ValueError("distance list length does not match n")
    if k > n:
        raise PlanError(f"cannot select {k} keys from {n}")
    quarter = max(1, -(-n // 4))
    k_early = min(-(-k // 4), quarter)
    early_pool = np.arange(quarter)
    early_order = np.lexsort((early_pool, dist[:quarter]))
    picked = [int(early_pool[i]) for i in early_order[:k_early]]
    taken = set(picked)
    rest_order = np.lexsort((np.arange(n), dist))
    for i in rest_order:
        if len(picked) == k:
            break
        if int(i) not in taken:
            picked.append(int(i))
            taken.add(int(i))
    return picked


def full_attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """softmax(Q K^T / sqrt(d) + mask) V on whatever keys are given."""
    dh = q.data.shape[-1]
    scores = mul(matmul(q, transpose_last(k)), dh ** -0.5)
    if mask is not None:
        scores = add(scores, Tensor(mask))
    return matmul(softmax_rows(scores), v)


def sign_match_attention(q: Tensor, k: Tensor, v: Tensor, cfg: SignMatchConfig,
                         key_positions: np.ndarray | None = None,
                         query_positions: np.ndarray | None = None,
                         counter: OpCounter | None = None) -> Tensor:
    """Attention restricted to the top-K sign-matched keys.

    key_positions maps key rows to their original sequence positions (used
    by the causal mask when some positions were pruned upstream). Selected
    keys are gathered in ascending original order, so at K = n the result
    is bit-identical to full attention. Causal queries that can see none of
    the selected keys produce a zero output row and bump the starvation
    counter.
    """
    batched = q.data.ndim == 3
    n_q = q.data.shape[-2]
    n_k = k.data.shape[-2]
    kk = min(cfg.k, n_k)
    if key_positions is None:
        key_positions = np.arange(n_k, dtype=np.int64)
    if query_positions is None:
        query_positions = np.arange(n_q, dtype=np.int64)

    q_mats = q.data if batched else q.data[None]
    k_mats = k.data if batched else k.data[None]
    sel = np.empty((q_mats.shape[0], kk), dtype=np.int64)
    for b in range(q_mats.shape[0]):
        val = representative_sign(q_mats[b], counter)
        dist = score_keys(k_mats[b], val, counter)
        rows = causal_select(dist, n_k, kk) if cfg.causal else select_topk(dist, kk)
        sel[b] = np.sort(np.asarray(rows, dtype=np.int64))

    idx = sel if batched else sel[0]
    k_sel = gather_rows(k, idx)
    v_sel = gather_rows(v, idx)

    mask = None
    starve = None
    if cfg.causal:
        sel_pos = key_positions[sel]                       # [B, kk]
        visible = sel_pos[:, None, :] <= query_positions[None, :, None]  # [B, n_q, kk]
        mask = np.where(visible, 0.0, MASK_NEG)
        starved = ~visible.any(axis=2)                     # [B, n_q]
        if counter is not None:
            counter.starved_queries += int(starved.sum())
        if starved.any():
            starve = np.where(starved, 0.0, 1.0)[..., None]
        if not batched:
            mask = mask[0]
            starve = None if starve is None else starve[0]

    out = full_attention(q, k_sel, v_sel, mask)
    if starve is not None:
        out = mul(out, starve)
    return out
