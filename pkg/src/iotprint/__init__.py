"""Fingerprint IoT devices from the payload bytes of their TCP sessions.

The pipeline turns packet captures into fixed-size byte images (one per
TCP session), trains a small dense network on them, and classifies new
sessions, including flagging devices that were never trained on.
"""

__version__ = "0.1.0"

from .capture import (
    RawPacket,
    SessionKey,
    SessionRecord,
    group_by_mac,
    parse_pcap,
    read_pcap,
    split_sessions,
)
from .dataset import (
    DeviceCorpus,
    ExperimentSpec,
    SplitDataset,
    SplitPools,
    filter_min_sessions,
    kfold_split,
    label_for_experiment,
    load_corpus,
    load_split,
    save_corpus,
    save_split,
    split,
)
from .evaluation import (
    EvalReport,
    calibrate_threshold,
    compute_report,
    evaluate,
    format_report,
    unknown_detection_report,
)
from .nn import (
    ModelParams,
    TrainConfig,
    TrainHistory,
    load_model,
    predict,
    predict_batch,
    save_model,
    select_best_epoch,
    train,
    train_best_epoch,
)
from .transform import (
    IdxDataset,
    dedupe_and_filter,
    extract_payload,
    fix_length,
    read_idx,
    to_image,
    write_idx,
)

__all__ = [
    "__version__",
    "RawPacket",
    "SessionKey",
    "SessionRecord",
    "parse_pcap",
    "read_pcap",
    "split_sessions",
    "group_by_mac",
    "IdxDataset",
    "extract_payload",
    "dedupe_and_filter",
    "fix_length",
    "to_image",
    "read_idx",
    "write_idx",
    "DeviceCorpus",
    "ExperimentSpec",
    "SplitPools",
    "SplitDataset",
    "filter_min_sessions",
    "split",
    "label_for_experiment",
    "kfold_split",
    "save_corpus",
    "load_corpus",
    "save_split",
    "load_split",
    "ModelParams",
    "TrainConfig",
    "TrainHistory",
    "train",
    "train_best_epoch",
    "select_best_epoch",
    "predict",
    "predict_batch",
    "save_model",
    "load_model",
    "EvalReport",
    "compute_report",
    "evaluate",
    "format_report",
    "calibrate_threshold",
    "unknown_detection_report",
]
