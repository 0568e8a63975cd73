"""Greedy significance analysis.

Each queue element is tentatively removed, the model is briefly fine-tuned,
and the resulting train/validation losses decide its fate: below the skip
threshold on both splits the removal sticks (and the fine-tuned weights
become the new working state); inside the band between skip and
approximation thresholds the element is replaced by a kind-appropriate
approximation; otherwise it is kept and, for blocks, its inner elements are
dropped from the queue. Under accuracy focus the running minimum loss is
the bar instead, and only pruning is applied.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .elements import (ATTN_BLOCK, FFN_BLOCK, FFN_GROUP, HEAD, QKV_GROUP,
                       ElementQueue, TransElement, attn_block, encompass_filter,
                       enumerate_elements, ffn_block)
from .errors import ConfigError, InfeasibleError, PlanError
from .focus import Focus, FocusMode
from .model import TransformerModel
from .plan import ApproxPlan, GroupShrink, Quantize, SignMatch, params_to_doc
from .tasks import TaskData
from .tensor import spawn_rng
from .training import (DEFAULT_BATCH, DEFAULT_LR, evaluate_loss, iter_batches,
                       train_epochs)


@dataclass
class Thresholds:
    """Loss bounds gating pruning (skip) and approximation decisions.

    min_loss_seen is the accuracy-focus bar: it starts at the baseline loss
    and only decreases, tracking the best accepted state.
    """

    skip_threshold: float
    approx_threshold: float
    min_loss_seen: float

    def __post_init__(self):
        if self.skip_threshold > self.approx_threshold:
            raise ConfigError("skip_threshold must be <= approx_threshold")


def compute_thresholds(baseline_loss: float, focus: FocusMode,
                       eps_skip: float | None = None,
                       eps_approx: float | None = None) -> Thresholds:
    """Thresholds from the fine-tuned baseline loss.

    Speed/size focus: relative multipliers on the baseline, by default
    eps_skip = acceptable degradation and eps_approx = twice that. Accuracy
    focus: both bounds start at the baseline loss itself.
    """
    if not math.isfinite(baseline_loss) or baseline_loss <= 0:
        raise ConfigError(f"baseline loss must be positive and finite, got {baseline_loss}")
    if focus.focus == Focus.ACCURACY:
        return Thresholds(baseline_loss, baseline_loss, baseline_loss)
    if eps_skip is None:
        eps_skip = focus.acceptable_degradation
    if eps_approx is None:
        eps_approx = 2.0 * eps_skip
    if eps_skip < 0 or eps_approx < eps_skip:
        raise ConfigError("need 0 <= eps_skip <= eps_approx")
    return Thresholds(baseline_loss * (1.0 + eps_skip),
                      baseline_loss * (1.0 + eps_approx),
                      baseline_loss)


@dataclass
class SplitThresholds:
    """Per-split thresholds; a decision must clear both splits."""

    train: Thresholds
    val: Thresholds

    @classmethod
    def from_baselines(cls, train_loss: float, val_loss: float, focus: FocusMode,
                       eps_skip: float | None = None,
                       eps_approx: float | None = None) -> "SplitThresholds":
        return cls(compute_thresholds(train_loss, focus, eps_skip, eps_approx),
                   compute_thresholds(val_loss, focus, eps_skip, eps_approx))


def evaluate_candidate(model: TransformerModel, plan: ApproxPlan, data: TaskData,
                       epochs: int, rng: np.random.Generator,
                       lr: float = DEFAULT_LR, batch_size: int = DEFAULT_BATCH):
    """Losses of a candidate plan after brief fine-tuning from the current
    weights. The input model is untouched; the tuned clone is returned so an
    accepted decision can adopt it.

    With epochs=0 the plan is evaluated as-is. Otherwise the train loss is
    the epoch-mean batch loss of the last fine-tuning epoch and the
    validation loss is the full held-out loss afterwards.
    """
    if len(data.train) == 0 or len(data.val) == 0:
        raise ConfigError("empty dataset split")
    work = model.clone()
    if epochs > 0:
        means = train_epochs(work, plan, data.train, epochs, rng,
                             lr=lr, batch_size=batch_size)
        train_loss = means[-1]
    else:
        train_loss = evaluate_loss(work, plan, data.train)
    val_loss = evaluate_loss(work, plan, data.val)
    return train_loss, val_loss, work


class GreedyAnalyzer:
    """Stateful driver of the greedy loop; see module docstring.

    Exposes the working model, the growing plan and the decision records so
    the harness can persist the audit trail.
    """

    def __init__(self, model: TransformerModel, data: TaskData,
                 thresholds: SplitThresholds, focus: FocusMode, seed: int,
                 epochs_per_candidate: int = 1, lr: float = DEFAULT_LR,
                 batch_size: int = DEFAULT_BATCH, sign_match_k: int | None = None,
                 quant_bits: int = 8, train_loss_only: bool = False,
                 encompass_enabled: bool = True, log_path=None):
        self.model = model
        self.data = data
        self.thresholds = thresholds
        self.focus = focus
        self.seed = seed
        self.epochs = epochs_per_candidate
        self.lr = lr
        self.batch_size = batch_size
        self.sign_match_k = sign_match_k or max(1, model.config.context_len // 4)
        self.quant_bits = quant_bits
        self.train_loss_only = train_loss_only
        self.encompass_enabled = encompass_enabled

        self.log_path = log_path
        if log_path is not None:  # start a fresh append-only audit log
            open(log_path, "w").close()

        self.work = model.clone()
        self.plan = ApproxPlan.empty()
        self.records: list[dict] = []
        self._step = 0
        self.baseline_train = thresholds.train.min_loss_seen
        self.baseline_val = thresholds.val.min_loss_seen

    # -- acceptance rules ---------------------------------------------------

    def _both(self, train_ok: bool, val_ok: bool) -> bool:
        return train_ok and (val_ok or self.train_loss_only)

    def _accept_skip(self, tl: float, vl: float) -> bool:
        t, v = self.thresholds.train, self.thresholds.val
        if self.focus.focus == Focus.ACCURACY:
            return self._both(tl < t.min_loss_seen, vl < v.min_loss_seen)
        return self._both(tl <= t.skip_threshold, vl <= v.skip_threshold)

    def _accept_approx(self, tl: float, vl: float) -> bool:
        if self.focus.focus == Focus.ACCURACY:
            return False
        t, v = self.thresholds.train, self.thresholds.val
        return self._both(tl <= t.approx_threshold, vl <= v.approx_threshold)

    def _high_importance(self, tl: float, vl: float) -> bool:
        """Whether a kept block should drop its inner elements.

        Speed/size: any block that failed the approximation band. Accuracy:
        only blocks whose removal pushed loss above the original baseline
        (anything milder leaves its groups worth examining)."""
        if self.focus.focus == Focus.ACCURACY:
            return not self._both(tl <= self.baseline_train, vl <= self.baseline_val)
        return True

    def _thresholds_doc(self) -> dict:
        t, v = self.thresholds.train, self.thresholds.val
        if self.focus.focus == Focus.ACCURACY:
            return {"train": {"skip": t.min_loss_seen, "approx": t.min_loss_seen},
                    "val": {"skip": v.min_loss_seen, "approx": v.min_loss_seen}}
        return {"train": {"skip": t.skip_threshold, "approx": t.approx_threshold},
                "val": {"skip": v.skip_threshold, "approx": v.approx_threshold}}

    # -- evaluation -----------------------------------------------------------

    def _resolvable(self, plan: ApproxPlan) -> bool:
        """Reject candidates that would produce an invalid plan (e.g. pruning
        the last key/value position group of a live block)."""
        try:
            plan.resolve(self.model.config)
            return True
        except PlanError:
            return False

    def _evaluate(self, plan: ApproxPlan):
        rng = spawn_rng(self.seed, 2, self._step)
        self._step += 1
        return evaluate_candidate(self.work, plan, self.data, self.epochs, rng,
                                  lr=self.lr, batch_size=self.batch_size)

    def _record(self, el: TransElement, action: str, tl: float, vl: float,
                decision: str, approx: dict | None = None,
                thresholds_doc: dict | None = None):
        rec = {
            "element": el.key,
            "tentative_action": action,
            "train_loss": tl,
            "val_loss": vl,
            "thresholds": thresholds_doc or self._thresholds_doc(),
            "decision": decision,
        }
        if approx is not None:
            rec["approx"] = approx
        self.records.append(rec)
        if self.log_path is not None:
            with open(self.log_path, "a") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    # -- main loop -------------------------------------------------------------

    def run(self, queue: ElementQueue) -> ApproxPlan:
        while queue.has_next():
            el = queue.pop()
            if self.focus.focus == Focus.SPEED and el.kind in (FFN_GROUP, QKV_GROUP):
                self._shrink_family(el, queue)
            else:
                self._decide(el, queue)
        return self.plan

    def _decide(self, el: TransElement, queue: ElementQueue):
        candidate = self.plan.with_skip(el)
        if not self._resolvable(candidate):
            self._record(el, "skip", None, None, "keep",
                         {"reason": "plan would be invalid"})
            return
        tl, vl, tuned = self._evaluate(candidate)
        thresholds_doc = self._thresholds_doc()  # capture before min-loss update
        if self._accept_skip(tl, vl):
            self.plan = candidate
            self.work = tuned
            self._update_min_loss(tl, vl)
            if self.encompass_enabled and el.granularity == 0:
                encompass_filter(queue, el, "skipped")
            decision, approx_doc = "skip", None
        else:
            params = self._band_approximation(el) if self._accept_approx(tl, vl) else None
            if params == "shrink":
                decision = "approximate"
                approx_doc = {"variant": "group_shrink", "status": "scheduled"}
            elif params is not None:
                self.plan = self.plan.with_approx(el, params)
                decision, approx_doc = "approximate", params_to_doc(params)
            else:
                decision, approx_doc = "keep", None
                if (self.encompass_enabled and el.granularity == 0
                        and self._high_importance(tl, vl)):
                    encompass_filter(queue, el, "kept")
        self._record(el, "skip", tl, vl, decision, approx_doc, thresholds_doc)

    def _update_min_loss(self, tl: float, vl: float):
        if self.focus.focus == Focus.ACCURACY:
            self.thresholds.train.min_loss_seen = min(self.thresholds.train.min_loss_seen, tl)
            self.thresholds.val.min_loss_seen = min(self.thresholds.val.min_loss_seen, vl)

    def _band_approximation(self, el: TransElement):
        """Kind-appropriate approximation for an element inside the band."""
        if self.focus.focus == Focus.SPEED:
            if el.kind == ATTN_BLOCK:
                return SignMatch(self.sign_match_k)
            if el.kind == FFN_BLOCK:
                return "shrink"  # realized at group granularity
            return None
        if self.focus.focus == Focus.SIZE:
            if el.kind in (ATTN_BLOCK, FFN_BLOCK, FFN_GROUP, QKV_GROUP):
                return Quantize(self.quant_bits)
        return None

    # -- contiguous shrinking ---------------------------------------------------

    def _shrink_family(self, first: TransElement, queue: ElementQueue):
        block = ffn_block(first.layer) if first.kind == FFN_GROUP else attn_block(first.layer)
        family = [first] + queue.extract_family(first.kind, first.layer, "shrink_scan")
        indices = sorted(e.index for e in family)
        lo, hi = self._two_phase_shrink(first.kind, first.layer, indices)
        # consolidate the kept interval on the block unless the scan was
        # partial or the block itself is already gone
        full_range = indices == list(range(self.model.config.num_weight_groups))
        if full_range and block not in self.plan.skiplist:
            self.plan = self.plan.with_approx(block, GroupShrink(lo, hi))

    def _two_phase_shrink(self, kind: str, layer: int, indices: list[int]) -> tuple[int, int]:
        """Prune groups from the bottom up, then from the top down, so the
        surviving groups form one contiguous dense band. Returns the kept
        interval [lo, hi) in group units."""
        pruned: set[int] = set()

        def attempt(g: int, phase: str) -> bool:
            candidate = self.plan.with_skip(TransElement(kind, layer, g))
            if not self._resolvable(candidate):
                self._record(TransElement(kind, layer, g), f"shrink_prune_{phase}",
                             None, None, "keep", {"reason": "plan would be invalid"})
                return False
            tl, vl, tuned = self._evaluate(candidate)
            ok = self._accept_skip(tl, vl)
            self._record(TransElement(kind, layer, g), f"shrink_prune_{phase}",
                         tl, vl, "skip" if ok else "keep")
            if ok:
                self.plan = candidate
                self.work = tuned
                self._update_min_loss(tl, vl)
                pruned.add(g)
            return ok

        n_bottom = 0
        for g in indices:
            if not attempt(g, "bottom"):
                break
            n_bottom += 1
        n_top = 0
        for g in reversed(indices[n_bottom:]):
            if not attempt(g, "top"):
                break
            n_top += 1
        kept = indices[n_bottom:len(indices) - n_top]
        if kept:
            return kept[0], kept[-1] + 1
        hi = indices[n_bottom - 1] + 1 if n_bottom else (indices[0] if indices else 0)
        return hi, hi


def greedy_significance(model: TransformerModel, data: TaskData, queue: ElementQueue,
                        thresholds: SplitThresholds, focus: FocusMode, seed: int = 0,
                        **kwargs) -> ApproxPlan:
    """Run the greedy loop and return the resulting plan (see GreedyAnalyzer
    for the full working state)."""
    return GreedyAnalyzer(model, data, thresholds, focus, seed, **kwargs).run(queue)


def shrink_weight_groups(model: TransformerModel, data: TaskData, block: TransElement,
                         thresholds: SplitThresholds, focus: FocusMode, seed: int = 0,
                         epochs_per_candidate: int = 1, **kwargs) -> tuple[int, int]:
    """Two-phase contiguous weight-group shrinking of one FFN block (or the
    QKV first stage of an attention block) under speed focus. Returns the
    kept interval; a block where nothing is removable keeps the full range.
    """
    if focus.focus != Focus.SPEED:
        raise ConfigError("contiguous shrinking applies under speed focus only; "
                          "other focuses prune groups individually")
    if block.kind not in (FFN_BLOCK, ATTN_BLOCK):
        raise ConfigError("shrink target must be an FFN or ATTN block")
    analyzer = GreedyAnalyzer(model, data, thresholds, focus, seed,
                              epochs_per_candidate=epochs_per_candidate, **kwargs)
    kind = FFN_GROUP if block.kind == FFN_BLOCK else QKV_GROUP
    indices = list(range(model.config.num_weight_groups))
    lo, hi = analyzer._two_phase_shrink(kind, block.layer, indices)
    return lo, hi


# -- comparison baselines -------------------------------------------------------

def taylor_signed_scores(model: TransformerModel, data: TaskData,
                         elements: list[TransElement] | None = None,
                         batch_size: int = 64) -> dict[TransElement, float]:
    """Signed first-order scores sum(w * dL/dw) over each element's
    parameters, from one training iteration's gradients. Signed sums are
    additive over disjoint parameter partitions; rankings use |score|."""
    elements = elements if elements is not None else enumerate_elements(model.config)
    work = model.clone()
    tokens, labels = next(iter_batches(data.train, batch_size))
    _, loss = work.forward(tokens, labels)
    loss.backward()
    scores = {}
    for el in elements:
        total = 0.0
        for w, g in _element_param_slices(work, el):
            if g is None:
                raise RuntimeError(f"missing gradient for parameters of {el.key}")
            total += float((w * g).sum())
        scores[el] = total
    return scores


def taylor_significance(model: TransformerModel, data: TaskData,
                        elements: list[TransElement] | None = None,
                        batch_size: int = 64) -> dict[TransElement, float]:
    """|sum(w * grad)| per element; the cheap stand-in for removal loss."""
    return {el: abs(s)
            for el, s in taylor_signed_scores(model, data, elements, batch_size).items()}


def _element_param_slices(model: TransformerModel, el: TransElement):
    """(weight slice, grad slice) pairs making up one element's parameters.

    Key/value position groups own no parameters (they select activations),
    so they yield nothing and score zero."""
    layer = model.layers[el.layer]
    dh = model.config.head_dim
    w = model.config.weight_group_width
    pairs = []
    if el.kind == FFN_BLOCK:
        names = layer.FFN_NAMES
        pairs = [(getattr(layer, n).data, getattr(layer, n).grad) for n in names]
    elif el.kind == ATTN_BLOCK:
        names = layer.ATTN_NAMES
        pairs = [(getattr(layer, n).data, getattr(layer, n).grad) for n in names]
    elif el.kind == HEAD:
        lo, hi = el.index * dh, (el.index + 1) * dh
        for name in ("wq", "wk", "wv"):
            t = getattr(layer, name)
            pairs.append((t.data[:, lo:hi], None if t.grad is None else t.grad[:, lo:hi]))
        for name in ("bq", "bk", "bv"):
            t = getattr(layer, name)
            pairs.append((t.data[lo:hi], None if t.grad is None else t.grad[lo:hi]))
        pairs.append((layer.wo.data[lo:hi, :],
                      None if layer.wo.grad is None else layer.wo.grad[lo:hi, :]))
    elif el.kind == FFN_GROUP:
        lo, hi = el.index * w, (el.index + 1) * w
        pairs.append((layer.w1.data[lo:hi, :],
                      None if layer.w1.grad is None else layer.w1.grad[lo:hi, :]))
    elif el.kind == QKV_GROUP:
        lo, hi = el.index * w, (el.index + 1) * w
        for name in ("wq", "wk", "wv"):
            t = getattr(layer, name)
            pairs.append((t.data[lo:hi, :], None if t.grad is None else t.grad[lo:hi, :]))
    return pairs


def oracle_significance(model: TransformerModel, data: TaskData,
                        elements: list[TransElement],
                        max_elements: int = 64) -> dict[TransElement, float]:
    """Train-split loss with each element removed one at a time, without
    fine-tuning. Exhaustive, so guarded to tiny models."""
    if len(elements) > max_elements:
        raise InfeasibleError(
            f"oracle significance over {len(elements)} elements exceeds the "
            f"guard of {max_elements}")
    return {el: evaluate_loss(model, ApproxPlan().with_skip(el), data.train)
            for el in elements}


def final_finetune(model: TransformerModel, plan: ApproxPlan, data: TaskData,
                   epochs: int, seed: int = 0, lr: float = DEFAULT_LR,
                   batch_size: int = DEFAULT_BATCH,
                   qat_enabled: bool = False) -> TransformerModel:
    """Fine-tune the frozen plan for the baseline epoch budget.

    Only live parameters train; quantized bands use a straight-through
    estimator when qat_enabled and stay frozen at their dequantized values
    otherwise. The best train-loss weights across epochs are returned, so
    the result is never worse on the train split than the plan-freeze state.
    """
    tuned = model.clone()
    if epochs == 0:
        return tuned
    rng = spawn_rng(seed, 3)
    best = tuned.clone()
    best_loss = evaluate_loss(tuned, plan, data.train)
    for _ in range(epochs):
        train_epochs(tuned, plan, data.train, 1, rng, lr=lr,
                     batch_size=batch_size, quant_ste=qat_enabled)
        cur = evaluate_loss(tuned, plan, data.train)
        if cur < best_loss:
            best_loss = cur
            best = tuned.clone()
    return best
