"""Unsupervised multimodal video summarization and highlight detection.

The pipeline consumes precomputed frame and sentence features, fuses them
with a masked multimodal transformer, and is trained with REINFORCE against
diversity, representativeness, and transcript-saliency rewards.  Inference
segments the video into shots and fills a length budget from the per-frame
probabilities.
"""

from .data_io import (
    Manifest,
    ManifestEntry,
    SentenceAlignment,
    SentenceSpan,
    VideoRecord,
    load_feature_matrix,
    load_manifest,
    load_records,
    load_video_record,
    write_feature_matrix,
)
from .model import ModelConfig, ModelParams, build_attention_mask, backward, forward, init_params
from .rewards import (
    RewardBundle,
    RewardConfig,
    dissimilarity,
    diversity_reward,
    merge_window_saliency,
    representativeness_reward,
    saliency_reward,
    total_reward,
)
from .segmentation import (
    ShotSegmentation,
    SummaryResult,
    kts_segment,
    select_shots_greedy,
    select_shots_knapsack,
    shot_scores,
    summarize_scores,
)
from .metrics import EvalReport, evaluate_records, f1_summary, kendall_tau, map_at, spearman_rho
from .training import (
    Adam,
    BaselineState,
    TrainConfig,
    l2_loss,
    log_policy_gradient_weights,
    percentage_loss,
    sample_episode,
    train,
    train_step,
)

__version__ = "0.1.0"
