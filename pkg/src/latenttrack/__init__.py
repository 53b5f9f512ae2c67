"""Online latent filtering with hypernetwork-generated predictors."""

from .autodiff import Tensor, backward, no_grad
from .baselines import DSSM, VRNN, BayesByBackprop, DeepEnsemble, MCDropout
from .data import Stream, synth_stream
from .inference import MetricSeries, stream_evaluate
from .mixture import Mixture, mixture_from_components, mixture_nll
from .model import LatentTrack
from .state import FilterState
from .training import TrainConfig, train_static, train_stateful

__version__ = "0.1.0"

__all__ = [
    "BayesByBackprop",
    "DSSM",
    "DeepEnsemble",
    "FilterState",
    "LatentTrack",
    "MCDropout",
    "MetricSeries",
    "Mixture",
    "Stream",
    "Tensor",
    "TrainConfig",
    "VRNN",
    "backward",
    "mixture_from_components",
    "mixture_nll",
    "no_grad",
    "stream_evaluate",
    "synth_stream",
    "train_static",
    "train_stateful",
]
