"""Aligned selection-via-proxy active learning over pre-computed features."""

from .alignment import AlignmentConfig, AlignmentHistory, AlignmentSignal, decide_update, logme_score, ped_converge_iters
from .backbone import BackboneNet, SynthSpec, TrainSchedule, exchange_head_accuracy, extract_features, gen_synth, pretrain
from .features import DatasetManifest, FeatureMatrix, PoolState, acquire_labels, init_pools, l2_normalize_rows, load_features, save_features
from .metrics import BaselineCurve, CostModel, TimeModel, al_time, avg_saving_ratio, emit_report, overall_cost, redundant_ratio, region_partition, saving
from .orchestrator import RunConfig, RunLedger, Seeds, run, run_random_baseline, run_replacement
from .proxy import ProxyNet, ProxyTrainConfig, init_proxy, predict_proba, train_proxy
from .strategies import SelectionBatch, badge_grad_embed, kmeanspp_select, select, select_confidence, select_margin, select_random

__version__ = "0.1.0"
