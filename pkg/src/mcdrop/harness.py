"""Evaluation reports, the T x p_drop sweep and the feature-cache benchmark."""

from __future__ import annotations

import json
import statistics
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from mcdrop import rng
from mcdrop.errors import ComparabilityError, CorrectnessError, FormatError
from mcdrop.io import label_hash, write_csv
from mcdrop.metrics import PermutationConfig, paired_permutation_test, per_class_ap, top_k_error
from mcdrop.network import DropoutMask, SplitNetwork, forward_deterministic, forward_full
from mcdrop.uncertainty import (
    BehaviorMode,
    ConfidenceConfig,
    PrecisionParams,
    apply_behavior,
    model_precision,
    predictive_stats,
    sample_predictions,
)

TOP_K = (1, 3, 5)
SIGNIFICANCE_LEVEL = 0.01
AGGREGATE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class TauMode:
    """How the model-precision term enters the statistics.

    ``off`` uses the empirical variance, ``variance`` adds ``1/tau`` to it and
    ``literal`` also adds ``1/tau`` to the mean. The keep probability in tau
    is taken from the evaluated ``p_drop``.
    """

    mode: str = "off"
    length_scale_sq: float | None = None
    sample_count: int | None = None
    weight_decay: float | None = None

    def __post_init__(self):
        if self.mode not in ("off", "variance", "literal"):
            raise ValueError(f"tau mode must be off, variance or literal, got {self.mode!r}")
        if self.mode != "off" and None in (self.length_scale_sq, self.sample_count, self.weight_decay):
            raise ValueError(f"tau mode {self.mode!r} needs length_scale_sq, sample_count and weight_decay")

    def tau(self, p_drop: float) -> float | None:
        if self.mode == "off":
            return None
        return model_precision(PrecisionParams(1.0 - p_drop, self.length_scale_sq, self.sample_count, self.weight_decay))


# --------------------------------------------------------------------------
# reports


def aggregates(scores: np.ndarray, labels: np.ndarray, head: str) -> dict:
    if head == "softmax":
        c = scores.shape[1]
        return {"top_k_error": {str(k): top_k_error(scores, labels, k) for k in TOP_K if k <= c}}
    aps = per_class_ap(scores, labels)
    valid = [a for a in aps if a is not None]
    return {"per_class_ap": aps, "mAP": float(np.mean(valid)) if valid else None}


def correct_top1(scores: np.ndarray, labels: np.ndarray) -> list[int]:
    # argmax returns the lowest index among ties, matching top_k_error
    return [int(v) for v in scores.argmax(axis=1) == labels.argmax(axis=1)]


def build_report(scores, labels, head: str, metadata: dict) -> dict:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    report = {
        "metadata": {**metadata, "head": head, "label_hash": label_hash(labels), "samples": int(scores.shape[0]), "classes": int(scores.shape[1])},
        "per_sample_scores": scores.tolist(),
        "labels": labels.astype(int).tolist(),
        "per_sample_correct": correct_top1(scores, labels) if head == "softmax" else None,
        "aggregates": aggregates(scores, labels, head),
    }
    return report


def _close(a, b) -> bool:
    if isinstance(a, dict):
        return isinstance(b, dict) and a.keys() == b.keys() and all(_close(a[k], b[k]) for k in a)
    if isinstance(a, list):
        return isinstance(b, list) and len(a) == len(b) and all(_close(x, y) for x, y in zip(a, b))
    if a is None or b is None:
        return a is b
    return abs(a - b) <= AGGREGATE_TOLERANCE


def verify_report(report: dict) -> None:
    """Recompute aggregates and per-sample decisions from the stored scores."""
    scores = np.asarray(report["per_sample_scores"], dtype=np.float64)
    labels = np.asarray(report["labels"])
    head = report["metadata"]["head"]
    if scores.shape != labels.shape:
        raise FormatError(f"report scores {scores.shape} and labels {labels.shape} differ in shape")
    if not _close(aggregates(scores, labels, head), report["aggregates"]):
        raise FormatError("report aggregates do not match its per-sample data")
    if head == "softmax" and report["per_sample_correct"] != correct_top1(scores, labels):
        raise FormatError("report per_sample_correct does not match its scores")


def load_report(path) -> dict:
    path = Path(path)
    try:
        report = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from None
    verify_report(report)
    return report


# --------------------------------------------------------------------------
# evaluation


def behavior_scores(
    net: SplitNetwork,
    x: np.ndarray,
    mode: BehaviorMode | str,
    T: int,
    p_drop: float,
    conf: ConfidenceConfig,
    seed: int,
    tau: TauMode = TauMode(),
    threads: int = 1,
) -> np.ndarray:
    mode = BehaviorMode(mode)
    if mode is BehaviorMode.PLAIN:
        return forward_deterministic(net, x)
    samples = sample_predictions(net, x, T, p_drop, seed, threads=threads)
    stats = predictive_stats(samples, tau=tau.tau(p_drop), literal_mean_offset=tau.mode == "literal")
    return apply_behavior(stats, conf, mode)


def evaluate(
    net: SplitNetwork,
    x: np.ndarray,
    y: np.ndarray,
    mode: BehaviorMode | str,
    T: int,
    p_drop: float,
    alpha: float,
    seed: int,
    tau: TauMode = TauMode(),
    threads: int = 1,
) -> dict:
    mode = BehaviorMode(mode)
    head = net.activation
    if head is None:
        raise ValueError("evaluation needs a softmax or sigmoid head")
    scores = behavior_scores(net, x, mode, T, p_drop, ConfidenceConfig(alpha), seed, tau, threads)
    plain = mode is BehaviorMode.PLAIN
    metadata = {
        "mode": mode.value,
        "T": None if plain else int(T),
        "p_drop": None if plain else float(p_drop),
        "alpha": float(alpha),
        "seed": int(seed),
        "tau_mode": tau.mode,
        "tau": None if plain else tau.tau(p_drop),
    }
    return build_report(scores, y, head, metadata)


def significance(report_a: dict, report_b: dict, sigma_p: float, seed: int) -> dict:
    for r in (report_a, report_b):
        if r.get("per_sample_correct") is None:
            raise ComparabilityError("significance needs per_sample_correct (softmax classification reports)")
    ma, mb = report_a["metadata"], report_b["metadata"]
    if ma["samples"] != mb["samples"] or ma["label_hash"] != mb["label_hash"]:
        raise ComparabilityError("reports were computed on different test sets (sample count or label hash differ)")
    res = paired_permutation_test(report_a["per_sample_correct"], report_b["per_sample_correct"], PermutationConfig(sigma_p=sigma_p, seed=seed))
    return {
        "statistic": res.statistic,
        "n": res.n,
        "p_value": res.p_value,
        "seed": res.seed,
        "sigma_p": float(sigma_p),
        "level": SIGNIFICANCE_LEVEL,
        "significant": res.p_value < SIGNIFICANCE_LEVEL,
    }


# --------------------------------------------------------------------------
# sweep

SWEEP_HEADER = ["mode", "T", "p_drop", "alpha", "seed", "top1_error", "top3_error", "top5_error", "mAP", "status"]
TIMING_HEADER = ["mode", "T", "p_drop", "runtime_ms"]


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def _sweep_row(report: dict) -> list:
    m = report["metadata"]
    agg = report["aggregates"]
    topk = agg.get("top_k_error", {})
    return [
        m["mode"], "" if m["T"] is None else m["T"], _fmt(m["p_drop"]), _fmt(m["alpha"]), m["seed"],
        *(_fmt(topk.get(str(k))) for k in TOP_K),
        _fmt(agg.get("mAP")), "ok",
    ]  # fmt: skip


def sweep(
    net: SplitNetwork,
    x: np.ndarray,
    y: np.ndarray,
    modes,
    Ts,
    p_drops,
    alpha: float,
    seed: int,
    out_csv,
    timing_csv=None,
    tau: TauMode = TauMode(),
    threads: int = 1,
) -> list[list]:
    """Plain baseline row plus one row per (mode, T, p_drop) cell.

    The metrics CSV is deterministic in ``seed``; wall-clock runtimes go to
    the separate ``timing_csv``. If a cell fails, the rows so far and a
    ``FAILED`` marker row are written before the error propagates.
    """
    modes = [BehaviorMode(m) for m in modes]
    if not modes or not Ts or not p_drops:
        raise ValueError("sweep grid is empty")
    if BehaviorMode.PLAIN in modes:
        raise ValueError("plain is always included as the baseline row; list only sampled modes")
    cells = [(BehaviorMode.PLAIN, None, None)] + [(m, T, p) for m in modes for T in Ts for p in p_drops]
    rows, timings = [], []
    try:
        for mode, T, p in cells:
            t0 = time.perf_counter()
            report = evaluate(net, x, y, mode, T, p, alpha, seed, tau, threads)
            timings.append([mode.value, "" if T is None else T, _fmt(p), f"{(time.perf_counter() - t0) * 1e3:.3f}"])
            rows.append(_sweep_row(report))
    except Exception as exc:
        rows.append([mode.value, "" if T is None else T, _fmt(p), _fmt(alpha), seed, "", "", "", "", f"FAILED: {exc}"])
        raise
    finally:
        write_csv(out_csv, SWEEP_HEADER, rows)
        if timing_csv is not None:
            write_csv(timing_csv, TIMING_HEADER, timings)
    return rows


# --------------------------------------------------------------------------
# cache benchmark

BENCH_HEADER = ["T", "naive_ms", "fast_ms", "speedup", "outputs_equal"]


def naive_samples(net: SplitNetwork, x: np.ndarray, T: int, p_drop: float, seed: int) -> np.ndarray:
    """T full passes, recomputing the feature part every time."""
    keep = 1.0 - p_drop
    return np.stack([forward_full(net, x, DropoutMask.sample(net, keep, seed, t, rng.TEST_DROPOUT)) for t in range(T)])


def bench_cache(net: SplitNetwork, x: np.ndarray, Ts, repetitions: int = 5, p_drop: float = 0.5, seed: int = 0) -> list[dict]:
    """Median wall time of naive vs cached sampling for each T."""
    if net.split == 0:
        raise ValueError("cache benchmark needs a nonempty feature part")
    results = []
    for T in Ts:
        naive = naive_samples(net, x, T, p_drop, seed)
        fast = sample_predictions(net, x, T, p_drop, seed)
        if not np.array_equal(naive, fast):
            raise CorrectnessError(f"cached and naive sampling disagree at T={T}")
        tn, tf = [], []
        for _ in range(repetitions):
            t0 = time.perf_counter()
            naive_samples(net, x, T, p_drop, seed)
            tn.append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            sample_predictions(net, x, T, p_drop, seed)
            tf.append(time.perf_counter() - t0)
        naive_ms = statistics.median(tn) * 1e3
        fast_ms = statistics.median(tf) * 1e3
        results.append({"T": int(T), "naive_ms": naive_ms, "fast_ms": fast_ms, "speedup": naive_ms / fast_ms, "outputs_equal": True})
    return results
