"""Spatial-categorical Gaussian noise priors for truncated diffusion inference.

The toolkit estimates per-location, per-class, and per-(location, class)
Gaussian statistics from corpora of latent images and label masks, assembles
them into per-token initialization distributions for a label mask, and runs
truncated deterministic sampling from there.  A built-in toy harness makes
the train/inference distribution-mismatch effects measurable at desk scale.
"""

from .errors import (
    CorpusError,
    DataError,
    FormatError,
    NumericalError,
    ParameterError,
    ShapeError,
    ToolkitError,
    TrainingError,
    UnknownClassError,
)
from .estimation import (
    PriorAccumulator,
    PriorBank,
    RunningStats,
    estimate_priors,
    load_bank,
    save_bank,
)
from .metrics import (
    GaussianSummary,
    batch_diversity,
    frechet_distance,
    furthest_point_sampling,
    oracle_segmentation_scores,
    summarize,
)
from .sampling import (
    VARIANCE_FLOOR,
    DistributionMap,
    assemble_map,
    generate,
    run_plan,
    sample_init,
)
from .schedule import (
    NoiseSchedule,
    TimestepPlan,
    build_schedule,
    ddim_step,
    forward_noise,
    ground_truth_prior_init,
    make_timestep_plan,
    truncation_step,
)
from .tensor_io import (
    CorpusRecord,
    LabelMask,
    LatentImage,
    downsample_mask,
    load_corpus,
    read_array,
    save_corpus,
    write_array,
)
from .toy import (
    StudyRow,
    ToyDenoiser,
    ToyScene,
    TrainConfig,
    class_base_values,
    empirical_mismatch_study,
    make_toy_corpus,
    make_toy_scenes,
    toy_schedule,
    train_toy_denoiser,
)

__version__ = "0.1.0"
