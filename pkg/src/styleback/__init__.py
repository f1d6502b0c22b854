"""Forward-backward style-transfer reconstruction with pixelwise anomaly
scoring: NST and CycleGAN transfer backends, a scene pipeline, and a
quantitative evaluation layer (AUROC, average precision, contrast ratio).
"""

from .data import (
    AnomalyMask,
    AnomalyScoreMap,
    ImageTensor,
    SceneRecord,
    SyntheticSceneSpec,
    load_dataset,
    read_image_png,
    read_mask_png,
    resize,
    synthesize_scene,
    write_image_png,
    write_mask_png,
    write_score_map_png,
)
from .exceptions import (
    ArgumentError,
    ConfigError,
    NumericError,
    PipelineStageError,
    StylebackError,
    UndefinedMetricError,
)
from .features import (
    ExtractorSpec,
    FeatureBundle,
    build_extractor,
    extract_features,
    tiny_spec,
    vgg19_spec,
)
from .nst import (
    NSTParams,
    NSTResult,
    content_loss,
    gram_matrix,
    nst_optimize,
    style_loss,
    style_weight_sweep,
)
from .cyclegan import (
    ArchSpec,
    TrainingGroupConfig,
    TranslationModel,
    adversarial_losses,
    cycle_consistency_loss,
    load_checkpoint,
    save_checkpoint,
    train,
    translate,
)
from .pipeline import (
    BackendChoice,
    CycleGANBackendConfig,
    NSTBackendConfig,
    PipelineArtifacts,
    backward_transfer,
    difference_map,
    forward_transfer,
    run_batch,
    run_pipeline,
)
from .metrics import auroc, average_precision, contrast_ratio, noise_level
from .report import ExperimentReport, SceneMetrics, build_report, write_report
from .figures import render_grid, save_grid

__version__ = "0.1.0"
