"""Feature-guided gradient backpropagation saliency for verification models."""

__version__ = "0.1.0"

from .autodiff import Trace, backward, backward_channel, forward, grad_check
from .baselines import MaskSet, make_masks, masked_saliency, score_backprop
from .core import (
    ExplanationSet,
    aggregate,
    channel_weights,
    explain_pair,
    gradient_stack,
    load_saliency,
    normalize_stack,
    save_saliency,
    split,
)
from .embedder import (
    ModelParams,
    ModelSpec,
    Verdict,
    block_pool_spec,
    conv_spec,
    cosine,
    embed,
    init_model,
    linear_spec,
    load_model,
    save_model,
    verify,
)
from .evaluation import (
    EvalConfig,
    EvalCurve,
    PairRecord,
    dataset_eval,
    deletion_curve,
    gaussian_blur,
    insertion_curve,
)
from .images import load_image, render_heatmap, save_image
