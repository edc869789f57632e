"""Saliency maps from per-location gradient contributions on chain CNNs."""

from . import nn
from .aggregate import (Aggregator, MethodPreset, SaliencyMap, aggregate,
                        gradcam, method_saliency)
from .extract import (AttachPoint, BiasIdentity, ContribField, ConvIdentity,
                      RealBias, RealConv, RealScaling, ScalingIdentity,
                      contribution_sum_check, identity_layer,
                      spatial_contributions)
from .evaluation import (Annotation, EvalReport, cascading_randomize,
                         class_sensitivity, identity_trick_study,
                         pointing_game, randomization_sweep, spearman)
from .gradcheck import run_gradcheck
from .metasal import MetaConfig, meta_saliency, taylor_residual
from .modelio import (GenerationError, ModelIOError, ModelShapeError,
                      ModelVersionError, ShapesDataset, TrainingError,
                      TruncatedPayloadError, default_toy_model, export_dataset,
                      generate_shapes, load_dataset, load_model,
                      model_accuracy, save_model, train_toy)
from .multilayer import (CombinedMap, LayerWeights, ProbeConfig, combine,
                         feature_spread_weights, linear_interp_weights,
                         probe_accuracy_weights, train_linear_probe,
                         uniform_weights, upsample)

__version__ = "0.1.0"
