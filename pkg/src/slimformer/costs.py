"""Closed-form MAC / parameter / byte accounting.

mac_count is the deterministic latency proxy used by tests and the
runtime-aware queue ordering; wall-clock timing is informational only.
Counts cover the multiply-accumulates of matmuls that an execution honoring
the plan would actually perform: pruned head slices, pruned weight-group
rows and pruned key/value positions are excluded, and a sign-matched score
stage is charged n*d MAC-equivalents plus the gathered-key attention
instead of the full n^2*d score matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

from .config import TransformerConfig

FLOAT_BYTES = 8
SCALE_BYTES = 8


@dataclass(frozen=True)
class CostModel:
    mac_count: int
    param_count: int
    bytes: int

    def __post_init__(self):
        if min(self.mac_count, self.param_count, self.bytes) < 0:
            raise ValueError("cost fields must be nonnegative")


def attn_macs(config: TransformerConfig, *, live_heads: int | None = None,
              live_qkv_rows: int | None = None, n_kv: int | None = None,
              signmatch_k: int | None = None) -> int:
    """MACs of one attention block under the given liveness counts."""
    n = config.context_len
    d = config.hidden_dim
    dh = config.head_dim
    h = config.num_heads if live_heads is None else live_heads
    d_in = d if live_qkv_rows is None else live_qkv_rows
    nk = n if n_kv is None else n_kv
    width = dh * h  # live projection width
    if width == 0:
        return 0
    proj = n * d_in * width + 2 * nk * d_in * width  # Q at all rows; K,V at live rows
    if signmatch_k is None:
        score = n * nk * width
        weighted = n * nk * width
    else:
        k_sel = min(signmatch_k, nk)
        score = n * width + n * k_sel * width  # linear scoring + gathered dot products
        weighted = n * k_sel * width
    out = n * width * d
    return proj + score + weighted + out


def ffn_macs(config: TransformerConfig, *, live_rows: int | None = None) -> int:
    n = config.context_len
    d_in = config.hidden_dim if live_rows is None else live_rows
    return n * d_in * config.ffn_dim + n * config.ffn_dim * config.hidden_dim


def head_macs(config: TransformerConfig) -> int:
    """Task head MACs (classification pools first, LM projects every position)."""
    c = config.output_classes
    if config.task_kind == "classification":
        return config.hidden_dim * c
    return config.context_len * config.hidden_dim * c


def attn_params(config: TransformerConfig, *, live_heads: int | None = None,
                live_qkv_rows: int | None = None) -> int:
    d = config.hidden_dim
    dh = config.head_dim
    h = config.num_heads if live_heads is None else live_heads
    d_in = d if live_qkv_rows is None else live_qkv_rows
    width = dh * h
    qkv = 3 * d_in * width + 3 * width      # weights + biases of live columns/rows
    out = width * d + d                      # W_o live rows + bias
    ln = 2 * d
    return qkv + out + ln


def ffn_params(config: TransformerConfig, *, live_rows: int | None = None) -> int:
    d = config.hidden_dim
    y = config.ffn_dim
    d_in = d if live_rows is None else live_rows
    return d_in * y + y + y * d + d + 2 * d


def static_params(config: TransformerConfig) -> int:
    """Embedding, positional table, final norm and task head: never pruned."""
    d = config.hidden_dim
    c = config.output_classes
    return config.vocab_size * d + config.context_len * d + 2 * d + d * c + c


def quantized_bytes(count: int, bits: int) -> int:
    """Packed size of one quantized group: codes plus its float scale."""
    return (count * bits + 7) // 8 + SCALE_BYTES


def cost_from_views(config: TransformerConfig, views) -> CostModel:
    """Aggregate cost over resolved per-layer plan views.

    Views are duck-typed: attn_skipped/ffn_skipped, live_heads,
    qkv_live/ffn_live boolean masks, kv_positions, signmatch_k, and
    quant band lists [(matrix_rows_lo, rows_hi, cols, bits), ...] exposed
    through attn_quant_bands()/ffn_quant_bands().
    """
    macs = head_macs(config)
    params = static_params(config)
    nbytes = static_params(config) * FLOAT_BYTES
    for view in views:
        if not view.attn_skipped:
            h_live = len(view.live_heads)
            d_in = int(view.qkv_live.sum())
            macs += attn_macs(config, live_heads=h_live, live_qkv_rows=d_in,
                              n_kv=len(view.kv_positions), signmatch_k=view.signmatch_k)
            p = attn_params(config, live_heads=h_live, live_qkv_rows=d_in)
            params += p
            nbytes += p * FLOAT_BYTES + _quant_delta(view.attn_quant_bands(config))
        if not view.ffn_skipped:
            d_live = int(view.ffn_live.sum())
            macs += ffn_macs(config, live_rows=d_live)
            p = ffn_params(config, live_rows=d_live)
            params += p
            nbytes += p * FLOAT_BYTES + _quant_delta(view.ffn_quant_bands(config))
    return CostModel(mac_count=int(macs), param_count=int(params), bytes=int(nbytes))


def _quant_delta(bands) -> int:
    """Byte delta from replacing float storage with packed codes per band."""
    delta = 0
    for count, bits in bands:
        if count > 0:
            delta += quantized_bytes(count, bits) - count * FLOAT_BYTES
    return delta
