"""Intent-conditioned actor-critic and the PPO/GAE update."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .actions import N_ACTIONS
from .encoders import INTENT_DIM

log = logging.getLogger(__name__)


class ResidualBlock(nn.Module):
    def __init__(self, dim: int) -> None:
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, dim)
        self.fc2 = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.fc2(torch.tanh(self.fc1(self.norm(x))))


class ActorCritic(nn.Module):
    """State encoder (two residual blocks) + intent pass-through feeding policy and value heads."""

    def __init__(
        self,
        feature_dim: int = 445,
        intent_dim: int = INTENT_DIM,
        embed_dim: int = 128,
        hidden: int = 256,
        n_actions: int = N_ACTIONS,
        zero_heads: bool = False,
    ) -> None:
        super().__init__()
        self.feature_dim = feature_dim
        self.intent_dim = intent_dim
        self.embed_dim = embed_dim
        self.hidden = hidden
        self.n_actions = n_actions
        self.input = nn.Linear(feature_dim, embed_dim)
        self.blocks = nn.Sequential(ResidualBlock(embed_dim), ResidualBlock(embed_dim))
        self.out_norm = nn.LayerNorm(embed_dim)
        joint = embed_dim + intent_dim
        self.policy = nn.Sequential(nn.Linear(joint, hidden), nn.Tanh(), nn.Linear(hidden, n_actions))
        self.value = nn.Sequential(nn.Linear(joint, hidden), nn.Tanh(), nn.Linear(hidden, 1))
        self._init(zero_heads)

    def _init(self, zero_heads: bool) -> None:
        for m in self.modules():
            if isinstance(m, nn.Linear):
                nn.init.orthogonal_(m.weight, gain=math.sqrt(2))
                nn.init.zeros_(m.bias)
        nn.init.orthogonal_(self.policy[-1].weight, gain=0.01)
        nn.init.orthogonal_(self.value[-1].weight, gain=1.0)
        if zero_heads:
            for head in (self.policy[-1], self.value[-1]):
                nn.init.zeros_(head.weight)
                nn.init.zeros_(head.bias)

    def manifest(self) -> dict:
        return {
            "feature_dim": self.feature_dim,
            "intent_dim": self.intent_dim,
            "embed_dim": self.embed_dim,
            "hidden": self.hidden,
            "n_actions": self.n_actions,
            "shapes": {k: list(v.shape) for k, v in self.state_dict().items()},
        }

    def forward(self, features: torch.Tensor, intent: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if features.shape[-1] != self.feature_dim or intent.shape[-1] != self.intent_dim:
            raise ValueError(
                f"input dims {features.shape[-1]}/{intent.shape[-1]} do not match "
                f"manifest {self.feature_dim}/{self.intent_dim}"
            )
        h = self.out_norm(self.blocks(torch.tanh(self.input(features))))
        z = torch.cat([h, intent], dim=-1)
        return self.policy(z), self.value(z).squeeze(-1)


def forward(features, intent_emb, params: ActorCritic) -> tuple[np.ndarray, float]:
    """Single-observation inference returning numpy logits and a float value."""
    dtype = next(params.parameters()).dtype
    with torch.no_grad():
        f = torch.as_tensor(np.asarray(features), dtype=dtype)
        z = torch.as_tensor(np.asarray(intent_emb), dtype=dtype)
        logits, value = params(f, z)
    return logits.numpy().astype(np.float64), float(value)


# -- masked sampling ---------------------------------------------------------------


def masked_log_probs(logits: np.ndarray, mask: Sequence[bool]) -> np.ndarray:
    """Log-probabilities of the renormalised masked distribution; masked entries are -inf."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("action mask has no valid action")
    z = np.where(mask, np.asarray(logits, dtype=np.float64), -np.inf)
    m = z[mask].max()
    lse = m + np.log(np.exp(z[mask] - m).sum())
    return z - lse


def sample_action(logits: np.ndarray, mask: Sequence[bool], rng: np.random.Generator) -> tuple[int, float]:
    logp = masked_log_probs(logits, mask)
    p = np.exp(logp)
    u = rng.random()
    cdf = np.cumsum(p)
    idx = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    idx = min(idx, len(p) - 1)
    # guard against landing on a zero-probability slot through rounding
    while not mask[idx]:
        idx -= 1
    return idx, float(logp[idx])


def torch_masked_logits(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    return logits.masked_fill(~mask, float("-inf"))


def masked_entropy(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    logp = torch.log_softmax(torch_masked_logits(logits, mask), dim=-1)
    p = logp.exp()
    # zero the -inf entries before multiplying so no 0 * inf reaches autograd
    safe = torch.where(mask, logp, torch.zeros_like(logp))
    return -(p * safe).sum(-1)


# -- advantage estimation ----------------------------------------------------------


def gae(
    rewards: Sequence[float],
    values: Sequence[float],
    dones: Sequence[bool],
    gamma: float,
    lam: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Generalised advantage estimates.

    ``values`` has one more entry than ``rewards`` (the bootstrap value).
    ``dones[t]`` marks that step ``t`` ended an episode, so nothing after it
    is credited back across the boundary.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    d = np.asarray(dones, dtype=np.float64)
    T = len(r)
    if len(v) != T + 1 or len(d) != T:
        raise ValueError("expected len(values) == len(rewards) + 1 == len(dones) + 1")
    adv = np.zeros(T, dtype=np.float64)
    running = 0.0
    for t in range(T - 1, -1, -1):
        nonterminal = 1.0 - d[t]
        delta = r[t] + gamma * v[t + 1] * nonterminal - v[t]
        running = delta + gamma * lam * nonterminal * running
        adv[t] = running
    return adv, adv + v[:T]


# -- rollouts and update ------------------------------------------------------------


@dataclass
class Rollout:
    features: list[np.ndarray] = field(default_factory=list)
    intents: list[np.ndarray] = field(default_factory=list)
    masks: list[list[bool]] = field(default_factory=list)
    actions: list[int] = field(default_factory=list)
    logps: list[float] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    values: list[float] = field(default_factory=list)
    dones: list[bool] = field(default_factory=list)

    def add(self, features, intent, mask, action, logp, reward, value, done) -> None:
        self.features.append(features)
        self.intents.append(intent)
        self.masks.append(list(mask))
        self.actions.append(int(action))
        self.logps.append(float(logp))
        self.rewards.append(float(reward))
        self.values.append(float(value))
        self.dones.append(bool(done))

    def extend(self, other: "Rollout") -> None:
        for name in self.__dataclass_fields__:
            getattr(self, name).extend(getattr(other, name))

    def __len__(self) -> int:
        return len(self.actions)


@dataclass
class Batch:
    features: torch.Tensor
    intents: torch.Tensor
    masks: torch.Tensor
    actions: torch.Tensor
    old_logps: torch.Tensor
    advantages: torch.Tensor
    returns: torch.Tensor

    def __len__(self) -> int:
        return len(self.actions)

    def index(self, idx) -> "Batch":
        return Batch(*(getattr(self, f)[idx] for f in self.__dataclass_fields__))


def build_batch(rollout: Rollout, gamma: float, lam: float, dtype=torch.float32) -> Batch:
    if rollout.dones and not rollout.dones[-1]:
        raise ValueError("rollout must end on an episode boundary")
    adv, ret = gae(rollout.rewards, rollout.values + [0.0], rollout.dones, gamma, lam)
    return Batch(
        features=torch.as_tensor(np.stack(rollout.features), dtype=dtype),
        intents=torch.as_tensor(np.stack(rollout.intents), dtype=dtype),
        masks=torch.as_tensor(np.array(rollout.masks, dtype=bool)),
        actions=torch.as_tensor(rollout.actions, dtype=torch.long),
        old_logps=torch.as_tensor(rollout.logps, dtype=dtype),
        advantages=torch.as_tensor(adv, dtype=dtype),
        returns=torch.as_tensor(ret, dtype=dtype),
    )


@dataclass(frozen=True)
class PPOHyper:
    clip: float = 0.2
    epochs: int = 8
    minibatch: int = 64
    max_grad_norm: float = 0.5
    ent_coef: float = 0.05
    vf_coef: float = 0.5
    normalize_advantages: bool = True


def ppo_loss(model: ActorCritic, mb: Batch, hp: PPOHyper) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Clipped surrogate + value loss - entropy bonus (to be minimised)."""
    logits, values = model(mb.features, mb.intents)
    logp_all = torch.log_softmax(torch_masked_logits(logits, mb.masks), dim=-1)
    logp = logp_all.gather(-1, mb.actions.unsqueeze(-1)).squeeze(-1)
    adv = mb.advantages
    if hp.normalize_advantages and len(adv) > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    log_ratio = logp - mb.old_logps
    ratio = log_ratio.exp()
    surr1 = ratio * adv
    surr2 = torch.clamp(ratio, 1.0 - hp.clip, 1.0 + hp.clip) * adv
    policy_loss = -torch.min(surr1, surr2).mean()
    value_loss = 0.5 * (values - mb.returns).pow(2).mean()
    entropy = masked_entropy(logits, mb.masks).mean()
    loss = policy_loss + hp.vf_coef * value_loss - hp.ent_coef * entropy
    with torch.no_grad():
        stats = {
            "policy_loss": policy_loss.detach(),
            "value_loss": value_loss.detach(),
            "entropy": entropy.detach(),
            "clip_frac": ((ratio - 1.0).abs() > hp.clip).float().mean(),
            "approx_kl": ((ratio - 1.0) - log_ratio).mean(),
        }
    return loss, stats


def ppo_update(
    model: ActorCritic,
    optimizer: torch.optim.Optimizer,
    batch: Batch,
    hp: PPOHyper,
    rng: np.random.Generator,
) -> dict[str, float]:
    """Run ``hp.epochs`` passes of minibatch PPO over ``batch``.

    Advantages are normalised per minibatch. A non-finite loss aborts the
    update and restores the parameters and optimiser state from before it.
    """
    saved_params = copy.deepcopy(model.state_dict())
    saved_opt = copy.deepcopy(optimizer.state_dict())
    n = len(batch)
    totals: dict[str, float] = {}
    count = 0
    for _ in range(hp.epochs):
        order = rng.permutation(n)
        for start in range(0, n, hp.minibatch):
            idx = torch.as_tensor(order[start : start + hp.minibatch], dtype=torch.long)
            loss, stats = ppo_loss(model, batch.index(idx), hp)
            if not torch.isfinite(loss):
                log.error("non-finite PPO loss; restoring parameters from before the update")
                model.load_state_dict(saved_params)
                optimizer.load_state_dict(saved_opt)
                return {"aborted": 1.0}
            optimizer.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(model.parameters(), hp.max_grad_norm)
            optimizer.step()
            for k, v in stats.items():
                totals[k] = totals.get(k, 0.0) + float(v)
            count += 1
    for p in model.parameters():
        if not torch.isfinite(p).all():
            log.error("non-finite parameters after update; restoring")
            model.load_state_dict(saved_params)
            optimizer.load_state_dict(saved_opt)
            return {"aborted": 1.0}
    out = {k: v / max(count, 1) for k, v in totals.items()}
    out["aborted"] = 0.0
    return out
