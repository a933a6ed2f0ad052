from .fusion import (
    FusionModel,
    InstanceSequence,
    MaskFeaturePyramid,
    MultiModalSequence,
    PredictionSet,
    select_reference,
    spacetime_position_codes,
    upsample_mask_logits,
)
from .graph_relation import (
    GraphRelationParams,
    MultiModalGraph,
    RelationWeights,
    attention_coefficients,
    augment,
    augment_graph,
    build_graph,
    grm_forward,
    propagate,
)
from .instruments import (
    Detection,
    ExternalProvider,
    GroundTruthProvider,
    InstrumentEmbedding,
    InstrumentGraph,
    ThresholdProvider,
    ToyPatchEncoder,
    assign_track_keys,
    build_instrument_graph,
    cap_detections,
    crop_resize,
    detect,
)
from .network import ModelInput, ReferringSegmenter
from .projection import SharedProjection
from .text import TextEmbedding, ToyTextEncoder, Vocabulary, pad_token_batch
from .video import ToyVideoEncoder, VideoFeatureMap, frames_to_clip
