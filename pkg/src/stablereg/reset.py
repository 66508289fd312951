"""Agreement-based global reset via coordinated phase transitions.

Every server keeps, for each member of the configuration, the last received
proposal entry (phase, tag), an all-seen flag, and an echo of what that peer
last acknowledged seeing of us. Proposals advance 1 -> 2 -> default in
lockstep, gated by everyone having echoed the current state; phase 2 applies
the local reset. Any inconsistent mixture of entries routes through a
bottom-reset of the whole array, after which all nodes climb back to the
default state. State is exchanged over the reliable channels round-robin;
one sweep over the peers constitutes an exchange round.
"""

from __future__ import annotations

from .core import Tag
from .wire import BOT_PRP, DEFAULT_PRP, Proposal, ResetXchg

_LEGAL_PHASES = (0, 1, 2)


def _phase_succ(prp: Proposal) -> int:
    # Bottom precedes the default entry in the recovery order.
    if prp == BOT_PRP:
        return 0
    return (prp.phase + 1) % 3


class ResetService:
    """Reset agreement state of one server; `step()` is the do-forever body."""

    def __init__(self, node_id: str, member_ids, on_local_reset):
        self.node_id = node_id
        self.ids = list(member_ids)
        self.on_local_reset = on_local_reset
        # Boot in the steady legal state so a fresh system is immediately quiet.
        self.prp: dict[str, Proposal] = {k: DEFAULT_PRP for k in self.ids}
        self.all: dict[str, bool] = {k: True for k in self.ids}
        self.echo: dict[str, tuple[Proposal, bool]] = {
            k: (DEFAULT_PRP, True) for k in self.ids}
        self.all_seen: set[str] = set(self.ids)
        self.proposals_installed = 0
        self.local_resets = 0

    # -- interface used by the server ------------------------------------------

    def enable_reset(self) -> bool:
        return all(self.prp[k] == DEFAULT_PRP and self.all[k]
                   for k in self.ids)

    def propose(self, tag: Tag) -> bool:
        """Install a phase-1 proposal; silently gated outside the enabled state."""
        if not self.enable_reset():
            return False
        me = self.node_id
        self.prp[me] = Proposal(1, tag)
        self.all[me] = False
        self.proposals_installed += 1
        return True

    def active(self) -> bool:
        """True while this node is participating in an agreement or recovery."""
        return self.prp[self.node_id] != DEFAULT_PRP

    def steady(self) -> bool:
        return (self.enable_reset()
                and all(self.echo[k] == (DEFAULT_PRP, True) for k in self.ids))

    def xchg_for(self, peer: str) -> ResetXchg:
        """Exchange message to `peer`: own entry plus echo of peer's last value."""
        me = self.node_id
        return ResetXchg(self.prp[me], self.all[me],
                         self.prp[peer], self.all[peer])

    def on_exchange(self, peer: str, xchg: ResetXchg) -> None:
        if peer not in self.prp:
            return
        self.prp[peer] = xchg.prp
        self.all[peer] = xchg.all_flag
        if xchg.all_flag:
            # Accumulate at arrival time: a short-lived true flag must not be
            # missed just because no step ran between two receptions.
            self.all_seen.add(peer)
        if xchg.echo_prp is not None:
            self.echo[peer] = (xchg.echo_prp, xchg.echo_all)

    # -- algorithm macros --------------------------------------------------------

    def _my_all(self, k: str) -> bool:
        """k's all-flag, or evidence everyone saw k's phase: some witnessed
        processor already advanced to k's successor phase (phase advances
        require the all-seen condition)."""
        if self.all[k]:
            return True
        succ = _phase_succ(self.prp[k])
        for l in self.ids:
            if l in self.all_seen and self.prp[l] != BOT_PRP \
                    and self.prp[l].phase == succ:
                return True
        return False

    def _degree(self, k: str) -> int:
        return 2 * self.prp[k].phase + (1 if self._my_all(k) else 0)

    @staticmethod
    def _corr_deg(d1: int, d2: int) -> bool:
        return (d1 - d2) % 6 <= 2 or (d2 - d1) % 6 <= 2

    def _greater_or_equal(self, mine: Proposal, k: str) -> bool:
        other = self.prp[k]
        if other == mine:
            return True
        return other != BOT_PRP and other.phase == _phase_succ(mine)

    def _max_prp(self) -> Proposal:
        me = self.node_id
        mine = self.prp[me]
        if any(self.prp[k] == BOT_PRP for k in self.ids):
            return mine
        d_me = self._degree(me)
        diffs = {(self._degree(k) - d_me) % 6 for k in self.ids}
        if not diffs <= {0, 1}:
            return mine
        phases = {self.prp[k].phase for k in self.ids}
        phase = max(phases) if phases == {0, 1} else mine.phase
        tags = [self.prp[k].tag for k in self.ids if self.prp[k].tag is not None]
        tag = max(tags, key=lambda t: t.sort_key()) if tags else None
        return Proposal(phase, tag)

    def _fault_detected(self) -> bool:
        me = self.node_id
        mine = self.prp[me]
        non_bot = [k for k in self.ids if self.prp[k] != BOT_PRP]
        for k in non_bot:
            p = self.prp[k]
            if p.phase not in _LEGAL_PHASES:
                return True
            if p.phase == 0 and p.tag is not None:
                return True
            if p.phase in (1, 2) and p.tag is None:
                return True
        degrees = [self._degree(k) for k in non_bot]
        for i in range(len(degrees)):
            for j in range(i + 1, len(degrees)):
                if not self._corr_deg(degrees[i], degrees[j]):
                    return True
        if mine != BOT_PRP:
            succ = _phase_succ(mine)
            for k in non_bot:
                if self.prp[k].phase == succ and k not in self.all_seen:
                    return True
        two_tags = {self.prp[k].tag for k in non_bot if self.prp[k].phase == 2}
        if len(two_tags) > 1:
            return True
        # A bottom entry while this node is mid-agreement aborts it; a node
        # already at bottom or default must not re-trigger, or recovery from
        # bottom (which needs the all-flag to survive a step) never happens.
        if (any(self.prp[k] == BOT_PRP for k in self.ids)
                and mine not in (DEFAULT_PRP, BOT_PRP)):
            return True
        return False

    def _prp_set_bot(self) -> None:
        for k in self.ids:
            self.prp[k] = BOT_PRP
            self.all[k] = False

    # -- the do-forever body -------------------------------------------------------

    def step(self) -> None:
        me = self.node_id
        for k in self.ids:
            if self.all[k]:
                self.all_seen.add(k)
        if self._fault_detected():
            self._prp_set_bot()
        if self.prp[me] == BOT_PRP and self.all[me]:
            self.prp[me] = DEFAULT_PRP
        # Adopt the dominating proposal and recompute the own all-seen flag
        # against the state before this assignment.
        mine = self.prp[me]
        new_all = all(
            self.echo[k][0] == mine and self._greater_or_equal(mine, k)
            for k in self.ids if k != me)
        self.prp[me] = self._max_prp()
        self.all[me] = new_all
        prps = [self.prp[k] for k in self.ids]
        if not any(p == BOT_PRP for p in prps) and set(prps) != {DEFAULT_PRP}:
            mine = self.prp[me]
            all_seen_ok = self.all[me] and set(self.ids) <= (self.all_seen | {me})
            echo_ok = all(
                self.echo[k] == (mine, self.all[me])
                and self._greater_or_equal(mine, k)
                for k in self.ids if k != me)
            if all_seen_ok and echo_ok:
                if mine.phase == 1:
                    self.prp[me] = Proposal(2, mine.tag)
                    self.all[me] = False
                elif mine.phase == 2:
                    self.prp[me] = DEFAULT_PRP
                    self.all[me] = False
                    # Clearing accumulated flags only at the wrap-around keeps
                    # the phase-successor check from racing a peer that moves
                    # on within one exchange sweep of our 1 -> 2 step.
                    self.all_seen = set()
            if self.prp[me].phase == 2 and self.prp[me].tag is not None:
                self.local_resets += 1
                self.on_local_reset(self.prp[me].tag)
        # The self-echo is by definition current; keeping it synced also
        # heals a corrupted entry.
        self.echo[me] = (self.prp[me], self.all[me])

    # -- fault injection ------------------------------------------------------------

    def corrupt(self, rng) -> None:
        """Randomize the whole agreement state within type ranges."""
        def rand_prp() -> Proposal:
            roll = rng.random()
            if roll < 0.2:
                return BOT_PRP
            if roll < 0.5:
                return DEFAULT_PRP
            from .core import Uid
            tag = Tag(rng.randrange(1, 1 << 20),
                      Uid(rng.getrandbits(64).to_bytes(8, "big"), 0))
            return Proposal(rng.choice((0, 1, 2)), tag if rng.random() < 0.8 else None)

        for k in self.ids:
            self.prp[k] = rand_prp()
            self.all[k] = rng.random() < 0.5
            self.echo[k] = (rand_prp(), rng.random() < 0.5)
        self.all_seen = {k for k in self.ids if rng.random() < 0.5}
