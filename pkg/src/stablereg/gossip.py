"""Server-to-server dissemination of maximum tags.

Two regimes: the coded-storage baseline sends a one-shot reliable gossip for
every arriving finalize message, while the self-stabilizing variant gossips
its digest periodically over the overwrite-on-arrival datagram path.
"""

from __future__ import annotations

from .core import INITIAL_TAG, Tag
from .wire import CLS_GOSSIP, GossipPayload, MsgType, WireMessage

#: The digest exchanged between servers (spec name: maxPreTag, maxFinTag,
#: maxIncNbrSeen, overflowSeen).
GossipDigest = GossipPayload


def build_digest(server) -> GossipDigest:
    """Digest of the server's current maxima."""
    store = server.store
    return GossipDigest(
        max_pre=store.max_pre_known,
        max_fin=store.max_fin,
        max_inc=server.max_inc_seen(),
        overflow=server.overflow_seen(),
    )


def gossip_tick(server) -> None:
    """Periodic dissemination to every peer; unreliable by design."""
    digest = build_digest(server)
    msg = WireMessage(MsgType.GOSSIP, server.sender_uid, payload=digest)
    for peer in server.peer_ids:
        server.transport.send_unreliable(peer, msg)


def gossip_on_finalize(server, tag: Tag) -> None:
    """One-shot reliable dissemination of a finalized tag (baseline variant).

    Invoked once per arriving finalize message; duplicate suppression is the
    channel's job, not ours.
    """
    digest = GossipDigest(
        max_pre=INITIAL_TAG,
        max_fin=tag,
        max_inc=server.max_inc_seen(),
        overflow=server.overflow_seen(),
    )
    msg = WireMessage(MsgType.GOSSIP, server.sender_uid, payload=digest)
    for peer in server.peer_ids:
        server.transport.send_reliable(peer, CLS_GOSSIP, msg)


def on_gossip(server, src: str, digest: GossipDigest) -> None:
    """Merge a received digest into local state (monotone in every field).

    A finalized tag above everything known locally is adopted as a fin
    record with no element; readers already tolerate element-less records.
    """
    if not isinstance(digest, GossipDigest):
        return  # malformed: never trust, never crash
    server.store.note_pre_tag(digest.max_pre)
    if server.store.max_fin < digest.max_fin:
        server.store.adopt_fin(digest.max_fin)
    server.note_inc_seen(digest.max_inc)
    if digest.overflow:
        server.latch_peer_overflow()
    server.digests_from[src] = digest
