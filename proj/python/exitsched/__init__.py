"""Budgeted early-exit policies for multi-exit classifiers."""

from ._exitsched import (
    Error,
    ExitLog,
    Policy,
    PolicyParams,
    brute_force_best_thresholds,
    build_targets,
    calibrate,
    confidence,
    evaluate,
    generate,
    generate_benchmark,
    initialize,
    load_checkpoint,
    load_log,
    load_policy,
    save_checkpoint,
    save_log,
    save_log_jsonl,
    save_policy,
    score_matrix,
    split_log,
    train,
)

__all__ = [
    "Error",
    "ExitLog",
    "Policy",
    "PolicyParams",
    "brute_force_best_thresholds",
    "build_targets",
    "calibrate",
    "confidence",
    "evaluate",
    "generate",
    "generate_benchmark",
    "initialize",
    "load_checkpoint",
    "load_log",
    "load_policy",
    "save_checkpoint",
    "save_log",
    "save_log_jsonl",
    "save_policy",
    "score_matrix",
    "split_log",
    "train",
]
