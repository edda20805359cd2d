"""Byzantine behaviors.

A behavior is attached to a node and consulted on every send, relay and
height start.  Before ``corrupt_at`` every behavior acts honestly, which is
how scripted (adaptive) corruption is modeled.
"""

from __future__ import annotations

from typing import TYPE_CHECKING, Callable, Optional

from ..agreement import BOTTOM, SKIP, BaMessage, Kind, should_propose
from ..crypto import hash_parts, sign, vrf_distance
from ..chain import build_block
from .messages import envelope
from .network import Envelope

if TYPE_CHECKING:
    from .node import Node
    from .runner import World


class Behavior:
    name = "honest"

    def __init__(self, world: "World", corrupt_at: int = 0):
        self.world = world
        self.corrupt_at = corrupt_at

    def corrupt(self, now: int) -> bool:
        return now >= self.corrupt_at

    def relays(self, node: "Node", now: int) -> bool:
        return not self.corrupt(now)

    def start_height(self, node: "Node", chain_id: int, height: int, now: int) -> bool:
        """False skips the honest agreement instance for this height."""
        return True

    def send(self, node: "Node", env: Envelope, now: int) -> bool:
        """True means the behavior took care of (or swallowed) the message."""
        return False

    # helpers

    def correct_members(self, node: "Node", chain_id: int, height: int) -> list[int]:
        cfg = node.epoch_config(node.epoch_of(height))
        return [m for m in cfg.notary_set(chain_id) if m not in self.world.byzantine_ids]

    def split(self, ids: list[int]) -> tuple[list[int], list[int]]:
        half = (len(ids) + 1) // 2
        return ids[:half], ids[half:]


class Silent(Behavior):
    name = "silent"

    def start_height(self, node, chain_id, height, now):
        return not self.corrupt(now)

    def send(self, node, env, now):
        return self.corrupt(now)


class DelayRelease(Behavior):
    """Runs the protocol but every own message lands exactly lambda later; never relays."""

    name = "delay_release"

    def send(self, node, env, now):
        if not self.corrupt(now):
            return False
        net = self.world.network
        net.mark_seen(env, node.id, now)
        for dst in range(net.n_nodes):
            if dst != node.id:
                net.send_at(node.id, dst, env, now + self.world.scenario.lam)
        return True


class EquivocateInit(Behavior):
    """Two different proposals, one per half of the correct notaries, timed just before step 2."""

    name = "equivocate_init"

    def start_height(self, node, chain_id, height, now):
        if not self.corrupt(now):
            return True
        lam = self.world.scenario.lam
        status_sig = sign(node.keys.secret_key, node.world.status(chain_id, height))
        left, right = self.split(self.correct_members(node, chain_id, height))
        for k, group in enumerate((left, right)):
            block = node.make_proposal(chain_id, height, now, timestamp=now + k)
            msg = BaMessage(Kind.INIT, chain_id, height, node.id, block.hash, 0, status_sig, block)
            env = envelope(node.id, msg)
            for dst in group:
                self.world.network.send_at(node.id, dst, env, now + 2 * lam - 1)
        return False

    def send(self, node, env, now):
        return self.corrupt(now)


class LeaderHogController:
    """Shared plan for all LeaderHog nodes.

    Per height, the Byzantine members whose VRF beats every correct proposer
    are revealed one per round, weakest first, to half of the correct
    members: round 1 just before their step 2, later rounds right after
    their step-3 commit of the previous round.
    """

    def __init__(self, world: "World"):
        self.world = world
        self.plans: dict[tuple[int, int], list] = {}

    def plan(self, victim: "Node", chain_id: int, height: int, now: int):
        key = (chain_id, height)
        if key in self.plans:
            return self.plans[key]
        w = self.world
        cfg = victim.epoch_config(victim.epoch_of(height))
        status = w.status(chain_id, height)
        best_correct = None
        for m in cfg.notary_set(chain_id):
            if m in w.byzantine_ids:
                continue
            if should_propose(w.keypairs[m].secret_key, status, cfg.crs, w.scenario.delta_fraction):
                d = vrf_distance(cfg.crs, sign(w.keypairs[m].secret_key, status))
                best_correct = d if best_correct is None else min(best_correct, d)
        hogs = []
        for m in cfg.notary_set(chain_id):
            node = w.nodes[m]
            if m not in w.byzantine_ids or not node.corrupt(now):
                continue
            sig = sign(w.keypairs[m].secret_key, status)
            d = vrf_distance(cfg.crs, sig)
            if best_correct is None or d < best_correct:
                hogs.append((d, m, sig))
        hogs.sort(key=lambda x: (-x[0], x[1]))
        envs = []
        for _, m, sig in hogs:
            block = victim.make_proposal(chain_id, height, now)
            block = build_block(
                chain_id, height, m, victim.chains[chain_id].blocks.get(height - 1),
                victim.chains[chain_id].sigmas.get(height - 1), block.acks, (), block.block_timestamp,
                epoch=block.epoch, config_round=block.config_round,
            )
            msg = BaMessage(Kind.INIT, chain_id, height, m, block.hash, 0, sig, block)
            envs.append((m, envelope(m, msg)))
        correct = [x for x in cfg.notary_set(chain_id) if x not in w.byzantine_ids]
        victims = set(correct[: (len(correct) + 1) // 2])
        self.plans[key] = (envs, victims)
        return self.plans[key]

    def on_start(self, node: "Node", chain_id: int, height: int, now: int) -> None:
        envs, victims = self.plan(node, chain_id, height, now)
        if envs and node.id in victims:
            m, env = envs[0]
            self.world.network.send_at(m, node.id, env, now + 2 * self.world.scenario.lam - 1)

    def on_commit(self, node: "Node", chain_id: int, height: int, rnd: int, now: int) -> None:
        plan = self.plans.get((chain_id, height))
        if plan is None:
            return
        envs, victims = plan
        if node.id in victims and rnd < len(envs):
            m, env = envs[rnd]
            self.world.network.send_at(m, node.id, env, now)


class LeaderHog(Behavior):
    name = "leader_hog"

    def start_height(self, node, chain_id, height, now):
        return not self.corrupt(now)

    def send(self, node, env, now):
        return self.corrupt(now)


# -- custom scripts ------------------------------------------------------------------

SCRIPTS: dict[str, Callable[..., Behavior]] = {}


def register_script(name: str):
    def wrap(cls):
        SCRIPTS[name] = cls
        cls.name = name
        return cls

    return wrap


@register_script("double_vote")
class DoubleVote(Behavior):
    """Honest proposals, but every vote goes out with a conflicting twin to half the nodes."""

    def send(self, node, env, now):
        msg = env.body
        if not self.corrupt(now) or not isinstance(msg, BaMessage) or msg.kind is Kind.INIT:
            return False
        if msg.value is SKIP or msg.value is BOTTOM:
            alt = hash_parts("double-vote", msg.chain_id, msg.height, msg.round)
        else:
            alt = BOTTOM
        twin = BaMessage(msg.kind, msg.chain_id, msg.height, msg.sender, alt, msg.round)
        twin_env = envelope(node.id, twin)
        net = self.world.network
        others = [d for d in range(net.n_nodes) if d != node.id]
        left, right = self.split(others)
        for dst in left:
            net.send_at(node.id, dst, env, net.arrival(node.id, dst, now))
        for dst in right:
            net.send_at(node.id, dst, twin_env, net.arrival(node.id, dst, now))
        return True

    def relays(self, node, now):
        return not self.corrupt(now)


BEHAVIORS = {
    "silent": Silent,
    "equivocate_init": EquivocateInit,
    "delay_release": DelayRelease,
    "leader_hog": LeaderHog,
}


def make_behavior(world: "World", behavior: str, corrupt_at: int, script: Optional[str]) -> Behavior:
    if behavior == "custom":
        try:
            return SCRIPTS[script](world, corrupt_at)
        except KeyError:
            raise ValueError(f"unknown adversary script {script!r}") from None
    return BEHAVIORS[behavior](world, corrupt_at)
