"""Acceptance criteria 1-10, one test each.

Every test prints a ``criterion N PASS|FAIL`` line; the lines are also
collected into a summary section at the end of the pytest run. Run directly
with ``python tests/test_acceptance.py`` or through pytest.
"""

from __future__ import annotations

import functools
import itertools
import sys
import time
from pathlib import Path

import httpx
import numpy as np
import pytest
import torch

from hybrid_redteam import config as cfgmod
from hybrid_redteam.actions import DURATION, ActionIndex, action_mask, ground, valid_targets
from hybrid_redteam.agent import RandomController, run_episode
from hybrid_redteam.belief import BeliefState
from hybrid_redteam.env import Environment
from hybrid_redteam.harness import rl_only_regression, train_and_eval
from hybrid_redteam.intent import Intent
from hybrid_redteam.killchain import golden_trace, shortest_impact_path
from hybrid_redteam.planner import RemoteLLMBackend, ScriptedBackend, plan, scripted_oracle
from hybrid_redteam.ppo import PPOHyper, gae, ppo_loss, sample_action
from hybrid_redteam.reward import RewardConfig
from hybrid_redteam.topology import curriculum_stage, generate_scenario
from hybrid_redteam.trainer import lr_at, should_early_stop

from conftest import hand_topology, tiny_config
from test_actions import mask_attributable
from test_blue import REACH_S1, act, blue_episode, presence_problems, random_action, restore_problems
from test_planner import CORPUS, chat_response
from test_ppo import kink_pattern, lambda_return_oracle, random_instance

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
ACCEPTANCE: list[str] = []


def record(n: int, title: str, ok: bool, detail: str) -> bool:
    line = f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def criterion(n: int, title: str):
    """The wrapped test returns (ok, detail); a raised exception is recorded as a failure."""

    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                ok, detail = fn(*args, **kwargs)
            except Exception as exc:
                record(n, title, False, f"{type(exc).__name__}: {exc}")
                raise
            assert record(n, title, ok, detail), detail

        return run

    return wrap


# -- 1 --------------------------------------------------------------------------------

REWARD_TABLE = {
    "discover_host": 0.2,
    "scan_host": 0.5,
    "compromise": 5.0,
    "escalate_root": 3.0,
    "impact": 5.0,
    "discover_subnet": 1.0,
    "first_compromise_defended": 8.0,
    "impact_without_root": -0.1,
    "exploit_without_scan": -0.05,
    "escalate_without_user": -0.05,
    "intent_match": 1.0,
    "intent_diverge": -0.3,
    "env_scale": 1.0,
}


@criterion(1, "reward-table conformance")
def test_criterion_1_reward_table():
    cfg = RewardConfig()
    wrong = {k: getattr(cfg, k) for k, v in REWARD_TABLE.items() if getattr(cfg, k) != v}
    return not wrong, f"{len(REWARD_TABLE)} constants checked exactly, mismatches: {wrong or 'none'}"


# -- 2 --------------------------------------------------------------------------------

PINNED = [
    "DiscoverRemoteSystems s0",
    "AggressiveServiceDiscovery h1",
    "ExploitRemoteService h1",
    "PrivilegeEscalate h1",
    "PrivilegeEscalate h1",
    "Impact h1",
]


@criterion(2, "kill-chain path lengths")
def test_criterion_2_kill_chain_lengths():
    topo = generate_scenario(tiny_config())
    assert len(topo.subnets) == 1 and not any(s.defended for s in topo.subnets)
    steps, path = shortest_impact_path(topo)
    no_aggressive = [a for a in ActionIndex if a != ActionIndex.AggressiveServiceDiscovery]
    stealth_steps, _ = shortest_impact_path(topo, allowed=no_aggressive)
    golden = [f"{a.index.name} {a.target}" for a in golden_trace(topo)]
    golden_steps = sum(DURATION[a.index] for a in golden_trace(topo))
    ok = steps == 10 and stealth_steps == 12 and golden == PINNED and golden_steps == 10
    return ok, f"BFS shortest = {steps} steps, {stealth_steps} with stealth scanning; golden trace pinned = {golden == PINNED}"


# -- 3 --------------------------------------------------------------------------------


@criterion(3, "PPO/GAE correctness")
def test_criterion_3_ppo_gae():
    t0 = time.monotonic()
    hp = PPOHyper()
    eps = 1e-4
    worst_grad, coords, instances = 0.0, 0, 100
    for seed in range(instances):
        model, batch, rng = random_instance(seed)
        loss, _ = ppo_loss(model, batch, hp)
        model.zero_grad()
        loss.backward()
        params = list(model.parameters())
        for _ in range(5):
            p = params[int(rng.integers(len(params)))]
            k = int(rng.integers(p.numel()))
            analytic = p.grad.view(-1)[k].item()
            with torch.no_grad():
                orig = p.view(-1)[k].item()
                p.view(-1)[k] = orig + eps
                plus, kp = ppo_loss(model, batch, hp)[0].item(), kink_pattern(model, batch, hp)
                p.view(-1)[k] = orig - eps
                minus, km = ppo_loss(model, batch, hp)[0].item(), kink_pattern(model, batch, hp)
                p.view(-1)[k] = orig
            if kp != km:
                continue
            numeric = (plus - minus) / (2 * eps)
            denom = max(abs(analytic), abs(numeric))
            worst_grad = max(worst_grad, 0.0 if denom == 0 else abs(analytic - numeric) / denom)
            coords += 1
    assert next(model.parameters()).dtype == torch.float64

    rng = np.random.default_rng(2024)
    worst_gae, episodes = 0.0, 0
    for length in range(1, 9):
        for _ in range(500):
            r = rng.normal(size=length).tolist()
            v = rng.normal(size=length + 1).tolist()
            d = (rng.random(length) < 0.3).tolist()
            gamma, lam = float(rng.uniform(0.01, 1.0)), float(rng.uniform(0.0, 1.0))
            adv, _ = gae(r, v, d, gamma, lam)
            worst_gae = max(worst_gae, float(np.max(np.abs(adv - np.array(lambda_return_oracle(r, v, d, gamma, lam))))))
            episodes += 1
    adv, _ = gae([1, 0], [0.5, 0.25, 0.0], [False, False], 1.0, 1.0)
    elapsed = time.monotonic() - t0
    ok = worst_grad < 1e-3 and coords >= 100 and worst_gae < 1e-10 and adv.tolist() == [0.5, -0.25] and elapsed < 60
    return ok, (
        f"max grad rel err {worst_grad:.2e} over {coords} coords on {instances} instances; "
        f"max GAE abs err {worst_gae:.2e} over {episodes} episodes; {elapsed:.1f}s"
    )


# -- 4 --------------------------------------------------------------------------------


@criterion(4, "mask soundness")
def test_criterion_4_mask_soundness():
    t0 = time.monotonic()
    rng = np.random.default_rng(4)
    topologies = [generate_scenario(curriculum_stage(s, seed=0)) for s in range(4)]
    steps = sampled_masked = attributable = episodes = 0
    while steps < 100_000:
        topo = topologies[episodes % 4]
        env = Environment(topo)
        obs = env.reset(seed=episodes)
        belief = BeliefState.from_reset(obs, topo.red_entry_host, topo.entry_subnet, topo.max_steps)
        logits = rng.normal(size=10) * 2.0  # a different random policy per episode
        while not env.done and steps < 100_000:
            mask = action_mask(belief)
            idx, _ = sample_action(logits, mask, rng)
            if not mask[idx]:
                sampled_masked += 1
                break
            targets = valid_targets(ActionIndex(idx), belief)
            intent = Intent(ActionIndex(idx).name, target=targets[int(rng.integers(len(targets)))]) if targets else None
            action = ground(idx, intent, belief)
            res = env.step(action)
            belief.update(action, res.observation)
            attributable += mask_attributable(res, action)
            steps += 1
        episodes += 1
    elapsed = time.monotonic() - t0
    ok = sampled_masked == 0 and attributable == 0 and elapsed < 60
    return ok, (
        f"{steps} steps over {episodes} episodes: {attributable} mask-attributable rejections, "
        f"{sampled_masked} masked samples; {elapsed:.1f}s"
    )


# -- 5 --------------------------------------------------------------------------------


@criterion(5, "blue-restore semantics")
def test_criterion_5_blue_restore():
    rng = np.random.default_rng(5)
    restored = prevented = 0
    problems: list[str] = []
    for i in range(400):
        delay = i % 4
        n = int(rng.integers(5, 60))
        seq = list(zip(rng.integers(0, 10, n).tolist(), rng.integers(0, 6, n).tolist()))
        topo, _, steps = blue_episode(seq, delay)
        r, p, bad = restore_problems(topo, steps, delay)
        restored, prevented, problems = restored + r, prevented + p, problems + bad
        problems += presence_problems(random_action(a, t) for a, t in seq)
    # the explicit withdraw-before-detection case
    topo = hand_topology(max_steps=80, detection_delay=2)
    env = Environment(topo)
    env.reset()
    seq = REACH_S1 + [act(ActionIndex.ExploitRemoteService, 4), act(ActionIndex.Withdraw, 4)] + [act(ActionIndex.Sleep)] * 5
    env_steps = [(a, env.step(a)) for a in seq]
    r, p, bad = restore_problems(topo, env_steps, 2)
    problems += bad
    explicit_ok = p == 1 and r == 0 and not any(res.reward_inputs.restored for _, res in env_steps)
    ok = not problems and restored > 0 and prevented > 0 and explicit_ok
    return ok, (
        f"{restored} restores exactly D ticks after IOC, {prevented} prevented by Withdraw, "
        f"{len(problems)} violations{': ' + problems[0] if problems else ''}"
    )


# -- 6, 7, 8 ---------------------------------------------------------------------------------

_RUNS: dict[str, dict] = {}


def _smoke(name: str, out_dir: Path) -> dict:
    rc = cfgmod.load(CONFIGS / name)
    t0 = time.monotonic()
    report, result = train_and_eval(
        rc.scenario, rc.train, rc.agent, rc.eval.episodes, rc.eval.seed,
        reward_config=rc.reward, backend=ScriptedBackend(), out_dir=out_dir,
    )
    return {
        "rc": rc,
        "report": report,
        "result": result,
        "seconds": time.monotonic() - t0,
        "csv": (out_dir / "metrics.csv").read_bytes(),
    }


@pytest.fixture(scope="module")
def hybrid_run(tmp_path_factory):
    if "hybrid" not in _RUNS:
        _RUNS["hybrid"] = _smoke("smoke.yaml", tmp_path_factory.mktemp("hybrid"))
    return _RUNS["hybrid"]


@criterion(6, "desk-scale hybrid training")
def test_criterion_6_hybrid_training(hybrid_run):
    rc, report = hybrid_run["rc"], hybrid_run["report"]
    topo = hybrid_run["result"].topology
    scenario_ok = (
        len(topo.subnets) == 2
        and sum(s.defended for s in topo.subnets) == 1
        and topo.max_steps == 200
        and rc.agent.use_planner
        and rc.planner["backend"] == "scripted"
    )
    ok = scenario_ok and report.n == 50 and report.ecr >= 0.9 and hybrid_run["seconds"] < 2 * 3600
    return ok, (
        f"ECR {report.ecr:.2f} ({report.compromised_count}/{report.n}) after "
        f"{hybrid_run['result'].episodes} episodes in {hybrid_run['seconds']:.0f}s; target >= 0.9"
    )


@criterion(7, "RL-only gap")
def test_criterion_7_rl_only_gap(hybrid_run, tmp_path):
    hyb = hybrid_run["rc"]
    rc = cfgmod.load(CONFIGS / "rl_only.yaml")
    same_budget = rc.train == hyb.train and rc.reward.hash() == hyb.reward.hash() and rc.scenario == hyb.scenario
    assert not rc.agent.use_planner
    reg = rl_only_regression(rc.scenario, rc.train, rc.eval.episodes, rc.eval.seed, rc.reward, tmp_path)
    gap = hybrid_run["report"].ecr - reg.report.ecr
    d = reg.diagnostics
    ok = same_budget and gap > 0.5 and 0.0 <= d["modal_action_frequency"] <= 1.0
    return ok, (
        f"hybrid ECR {hybrid_run['report'].ecr:.2f} vs RL-only {reg.report.ecr:.2f} (gap {gap:.2f}, need > 0.5); "
        f"RL-only modal action {d['modal_action']} at {d['modal_action_frequency']:.2f}, "
        f"entropy {d['action_entropy']:.2f} nats; identical budget and reward config = {same_budget}"
    )


@criterion(8, "determinism")
def test_criterion_8_determinism(hybrid_run, tmp_path):
    again = _smoke("smoke.yaml", tmp_path)
    same_report = again["report"].to_json() == hybrid_run["report"].to_json()
    same_csv = again["csv"] == hybrid_run["csv"]
    return same_report and same_csv, f"identical Report = {same_report}, identical metrics.csv bytes = {same_csv}"


# -- 9 -----------------------------------------------------------------------------------------


@criterion(9, "early-stop and schedule arithmetic")
def test_criterion_9_early_stop_and_lr():
    example = [100, 100.2, 100.3, 100.4, 100.4, 100.45]
    checks = {
        "stops on worked example at 20000": should_early_stop(example, 20_000),
        "waits below 20000 episodes": not should_early_stop(example, 19_999),
        "needs 5 windows": not should_early_stop(example[1:], 50_000),
        "0.5% gain blocks stop": not should_early_stop([100, 100.5, 100.5, 100.5, 100.5, 100.5], 30_000),
        "lr starts at 3e-4": lr_at(0.0, 3e-4, 3e-5) == 3e-4,
        "lr ends at 3e-5": lr_at(1.0, 3e-4, 3e-5) == 3e-5,
        "cosine endpoints": lr_at(0.0, 3e-4, 3e-5, "cosine") == 3e-4 and lr_at(1.0, 3e-4, 3e-5, "cosine") == 3e-5,
    }
    failed = [k for k, v in checks.items() if not v]
    return not failed, f"{len(checks) - len(failed)}/{len(checks)} exact checks hold" + (f"; failed: {failed}" if failed else "")


# -- 10 ----------------------------------------------------------------------------------------


@criterion(10, "planner robustness")
def test_criterion_10_planner_robustness():
    topo = generate_scenario(curriculum_stage(1, seed=0))
    env = Environment(topo)
    obs = env.reset(seed=0)
    belief = BeliefState.from_reset(obs, topo.red_entry_host, topo.entry_subnet, topo.max_steps)
    want = scripted_oracle(belief).to_dict()
    resolved = parsed = fell_back = 0
    for case in CORPUS:
        backend = RemoteLLMBackend("http://planner.test", "m", transport=httpx.MockTransport(lambda r, c=case: chat_response(c["raw"])))
        intent = plan("summary", [], backend, belief)
        if isinstance(intent, Intent):
            resolved += 1
        if intent.source == "remote":
            parsed += 1
        elif intent.source == "fallback" and {**intent.to_dict(), "source": "scripted"} == want:
            fell_back += 1

    raws = itertools.cycle(c["raw"] for c in CORPUS)
    backend = RemoteLLMBackend("http://planner.test", "m", transport=httpx.MockTransport(lambda r: chat_response(next(raws))))
    aborts = 0
    for ep in range(5):
        try:
            out = run_episode(env, RandomController(), backend=backend, rng=np.random.default_rng(ep), episode=ep, env_seed=ep)
            aborts += out.trace[-1]["step"] != topo.max_steps
        except Exception:
            aborts += 1
    ok = len(CORPUS) >= 20 and resolved == len(CORPUS) and parsed + fell_back == len(CORPUS) and aborts == 0
    return ok, (
        f"{resolved}/{len(CORPUS)} malformed outputs resolved ({parsed} parsed, {fell_back} scripted fallback); "
        f"{aborts} episode aborts in 5 full episodes"
    )


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
