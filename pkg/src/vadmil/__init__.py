"""Weakly supervised video anomaly scoring with a multiple-instance ranking loss."""

from .evaluator import FrameScores, RocResult, auc_pair_oracle, evaluate, expand_to_frames, roc_auc
from .features import (
    Bag,
    DatasetManifest,
    FeatureTensor,
    Label,
    ManifestEntry,
    Split,
    Stream,
    build_bag,
    fuse_streams,
    read_feature_file,
    read_manifest,
    segmentize,
    write_feature_file,
    write_manifest,
)
from .objective import BagPairLoss, ObjectiveConfig, bag_max, batch_loss, pair_loss, ranking_holds
from .optimizers import OptimizerKind, OptimizerState, adagrad_step, adam_step, make_state, sweep_grid
from .scorer import Mode, ScoringNetwork, backward, forward, init_network, load_checkpoint, save_checkpoint
from .synth import SynthSpec, generate, oracle_scorer
from .trainer import TrainConfig, TrainLog, sample_batch, train

__version__ = "0.1.0"
