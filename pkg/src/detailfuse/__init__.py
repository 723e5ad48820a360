"""Complete-Cover patching, feature fusion, and retrieval evaluation."""

from .errors import (
    BankFormatError,
    ConfigError,
    DetailFuseError,
    GeometryError,
    ShapeError,
    StageError,
    WorldError,
)
from .geometry import (
    CoverConfig,
    CoverMode,
    CoverSet,
    ObjectBox,
    PatchBox,
    VerificationReport,
    covers,
    generate_cc,
    generate_grid,
    generate_obj,
    patch_count_bound,
    verify_cover,
)
from .autograd import Tensor
from .optim import AdamW, Parameters, adamw_step, clip_grad_value, load_params, save_params
from .fusion import (
    FusionConfig,
    FusionModel,
    TrainConfig,
    fuse_forward,
    query_proxy_loss,
    train,
)
from .retrieval import (
    ClassQuery,
    HistogramConfig,
    ImageRecord,
    QuerySet,
    RetrievalReport,
    SourceTag,
    evaluate,
    filter_by_rmax,
    recall_at_k,
    score_images,
)
from .world import ScaleRegime, World, WorldConfig, bank_from_world, build_world, manifest_dict
from .bank import (
    BankKind,
    ImageBank,
    TextBank,
    iter_image_records,
    read_image_bank,
    read_text_bank,
    write_image_bank,
    write_text_bank,
)
from .resources import measure_query_latency, storage_estimate
from .runner import PRESETS, load_config, run

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
