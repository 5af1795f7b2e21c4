"""Offline agents (DecQN, BCQ, CQL, IQL, OneStep, BC) and online DecQN."""

from factored_rl.agents.agent import ALGORITHMS, Agent, AgentConfig
from factored_rl.agents.ops import (
    bc_loss,
    bcq_allowed,
    bcq_target,
    cql_penalty,
    expectile_loss,
    iql_extract,
    onestep_value,
)
from factored_rl.agents.train import (
    OnlineLog,
    ReplayBuffer,
    TrainLog,
    greedy_return,
    train_offline,
    train_online,
)

__all__ = [
    "ALGORITHMS",
    "Agent",
    "AgentConfig",
    "OnlineLog",
    "ReplayBuffer",
    "TrainLog",
    "bc_loss",
    "bcq_allowed",
    "bcq_target",
    "cql_penalty",
    "expectile_loss",
    "greedy_return",
    "iql_extract",
    "onestep_value",
    "train_offline",
    "train_online",
]
