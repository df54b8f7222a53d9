"""Music quality metrics, control accuracy and attribute information analysis."""
from .control import (ControlResult, control_metrics, detect_key, key_label, parse_instruments,
                      parse_key, parse_time_signature, piece_tempo, piece_time_signature)
from .metrics import MAX_PCE, SCALES, pitch_class_entropy, pitch_entropy, scale_consistency
from .mi import (TABLE_LABELS, TABLE_ORDER, MIMatrices, entropy, joint_counts, mutual_information,
                 mutual_information_analysis, normalized_mi)
from .report import MetricReport, evaluate

__all__ = [
    "ControlResult", "control_metrics", "detect_key", "key_label", "parse_instruments", "parse_key",
    "parse_time_signature", "piece_tempo", "piece_time_signature", "MAX_PCE", "SCALES",
    "pitch_class_entropy", "pitch_entropy", "scale_consistency", "TABLE_LABELS", "TABLE_ORDER",
    "MIMatrices", "entropy", "joint_counts", "mutual_information", "mutual_information_analysis",
    "normalized_mi", "MetricReport", "evaluate",
]
