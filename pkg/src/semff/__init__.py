"""Text-guided semantic fast-forwarding.

Two trainable pieces: a joint document/image embedding network whose cosine
geometry says how well a frame matches a query document, and a velocity-
controlled navigation agent that uses that signal to decide which frames of
a video to keep. Everything runs on a small built-in autodiff engine; no
deep-learning framework is required.
"""

from .agent import (Action, AgentConfig, MlpParams, NavState, Trajectory,
                    compute_returns, compute_reward, entropy, fast_forward,
                    load_agent, policy_forward, reinforce_update, rollout,
                    save_agent, step_env, train_agent, uniform_skip)
from .errors import ConfigError, DataFormatError, NumericError, ShapeError
from .metrics import (EvalReport, GroundTruth, evaluate_selection,
                      precision_recall_f1, segment_coverage)
from .optim import Adam
from .tensor import Tape, Tensor, backward, grad_check
from .vdan import (TOY_CONFIG, VdanConfig, VdanParams, WordVectorTable,
                   attention_pool, build_training_pairs,
                   cosine_embedding_loss, encode_document, encode_image,
                   encode_sentence, gru_cell, load_vdan, save_vdan, tokenize,
                   train_vdan)

__version__ = "0.1.0"
