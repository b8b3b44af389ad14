"""Deep radar detector: simulation, classical baseline, and a from-scratch
two-stage neural detector over range-Doppler maps."""

from .core import (
    AngleGrid,
    Detection4D,
    GroundTruthLabel,
    RadarParams,
    RawFrame,
    RDMap,
    default_params,
    uniform_rect_array,
)
from .classic import (
    CLASSIC1,
    CLASSIC2,
    CalibrationMatrix,
    CfarParams,
    bartlett_doa,
    ca_cfar,
    classic_detect,
    ideal_calibration,
    rd_transform,
)
from .sim import (
    ChannelPerturbation,
    DatasetManifest,
    SimConfig,
    TargetSpec,
    add_noise,
    generate_calibration_dataset,
    measured_calibration,
    steering_vector,
    synthesize_frame,
)
from .augment import AugmentShift, augment_shift, random_augment
from .model import AngNetConfig, DRDModel, RDNetConfig, crop3x3
from .train import TrainSchedule, drd_gradient_check, finetune_noise, train_drd
from .evaluate import (
    AccuracyReport,
    accuracy,
    compare_methods,
    match_detections,
    snr_sweep,
)
from .config import RunConfig

__version__ = "0.1.0"
