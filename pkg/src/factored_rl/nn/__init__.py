"""Small deterministic MLP engine: forward/backward, losses, Adam, Polyak averaging."""

from factored_rl.nn.checkpoint import load_net, save_net
from factored_rl.nn.losses import (
    DecomposedTDLoss,
    ExpectileLoss,
    FactoredNLLLoss,
    HuberLoss,
    MSELoss,
    cql_penalty,
    expectile_loss,
    huber,
    log_softmax,
    segment_log_softmax,
)
from factored_rl.nn.mlp import (
    GradBundle,
    NetParams,
    backprop,
    backward,
    forward,
    forward_cached,
    init_mlp,
)
from factored_rl.nn.optim import AdamState, adam_step, clip_global_norm, global_norm, polyak

__all__ = [
    "AdamState",
    "DecomposedTDLoss",
    "ExpectileLoss",
    "FactoredNLLLoss",
    "GradBundle",
    "HuberLoss",
    "MSELoss",
    "NetParams",
    "adam_step",
    "backprop",
    "backward",
    "clip_global_norm",
    "cql_penalty",
    "expectile_loss",
    "forward",
    "forward_cached",
    "global_norm",
    "huber",
    "init_mlp",
    "load_net",
    "log_softmax",
    "polyak",
    "save_net",
    "segment_log_softmax",
]
