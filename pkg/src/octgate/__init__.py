"""Unsupervised out-of-distribution gating for 1D OCT M-scan streams.

The core detector fits one multivariate Gaussian per feature scale on pooled
multi-scale features of in-distribution M-scans and scores new M-scans by the
sum of per-scale Mahalanobis distances; scans above a calibrated threshold are
rejected before they reach the downstream retina-distance estimator.
"""

from .baselines import (
    MahaAdScorer,
    RawMahaAdScorer,
    SnrScorer,
    SupervisedLiteScorer,
    UncertaintyScorer,
    raw_mahaad_fit,
    snr_score,
    supervised_lite_fit,
    supervised_lite_score,
    uncertainty_score,
)
from .datagen import (
    CORRUPTION_KINDS,
    CorruptionSpec,
    LabeledMScan,
    SynthParams,
    corrupt,
    corrupt_fraction,
    default_test_set,
    default_training_set,
    synth_dataset,
    synth_mscan,
)
from .downstream import IlmEstimate, ilm_from_heatmap, mae, mae_um, reference_heatmap
from .evaluate import (
    DetectionReport,
    RejectionCurve,
    auroc,
    average_precision,
    detection_experiment,
    emit_report,
    per_corruption_auroc,
    per_corruption_experiment,
    rejection_experiment,
)
from .features import (
    BuiltinPyramidExtractor,
    ExportedNetworkExtractor,
    ExtractorDescriptor,
    FeatureSet,
    make_builtin_extractor,
)
from .gating import GateVerdictRecord, frame_ascan, run_gate
from .mahal import (
    DetectorModel,
    ScaleGaussian,
    Verdict,
    calibrate_threshold,
    fit,
    fit_detector,
    load_model,
    mahalanobis,
    save_model,
    score,
    score_many,
)
from .preprocess import (
    PreppedImage,
    PreprocConfig,
    normalize_channels,
    preprocess_mscan,
    rescale_to_byte_range,
    resize_bicubic,
)
from .scan import (
    MScan,
    read_csv_ascans,
    read_mscan_container,
    window_stream,
    write_mscan_container,
)

__version__ = "0.1.0"
