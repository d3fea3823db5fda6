from __future__ import annotations

import math
from typing import Iterator, Sequence

import numpy as np

from causalgr.data.generator import UserSequence
from causalgr.models.config import SequenceBatch


def synth_late_fusion(seq: UserSequence, freeze_at: int | None = None) -> np.ndarray:
    """Per-event running counts over strictly earlier events.

    Column 0 is impressions so far, column ``1 + t`` positives so far on task
    ``t``.  With ``freeze_at`` set, rows at or after that index keep the counts
    of the first ``freeze_at`` events (used to keep candidates from seeing each
    other's labels).
    """
    labels = seq.labels()
    n = len(seq.events)
    out = np.zeros((n, 1 + labels.shape[1]))
    if n == 0:
        return out
    out[1:, 0] = np.arange(1, n)
    out[1:, 1:] = np.cumsum(labels, axis=0)[:-1]
    if freeze_at is not None and freeze_at < n:
        out[freeze_at:] = out[freeze_at]
    return out


def n_batches(n_users: int, batch_size: int) -> int:
    return math.ceil(n_users / batch_size)


def make_batches(sequences: Sequence[UserSequence], batch_size: int, seq_len: int | None = None,
                 isolate_candidates: bool = False, dtype=np.float64) -> Iterator[SequenceBatch]:
    """Right-padded batches in the given user order.

    Sequences longer than ``seq_len`` keep their most recent events.  With
    ``isolate_candidates`` the late-fusion counts of candidate events are frozen
    at the end of the context segment.
    """
    if seq_len is None:
        seq_len = max((len(s) for s in sequences), default=0)
    for start in range(0, len(sequences), batch_size):
        chunk = [_clip(s, seq_len) for s in sequences[start:start + batch_size]]
        yield _collate(chunk, seq_len, isolate_candidates, dtype)


def _clip(seq: UserSequence, seq_len: int) -> UserSequence:
    drop = len(seq) - seq_len
    if drop <= 0:
        return seq
    return UserSequence(seq.user_id, seq.preference, seq.events[drop:], max(0, seq.context_len - drop))


def _collate(chunk: list[UserSequence], seq_len: int, isolate: bool, dtype) -> SequenceBatch:
    first = next(s for s in chunk if len(s))
    d_item = len(first.events[0].features)
    d_action = len(first.events[0].action_features)
    n_tasks = len(first.events[0].labels)
    b = len(chunk)
    items = np.zeros((b, seq_len, d_item), dtype=dtype)
    actions = np.zeros((b, seq_len, d_action), dtype=dtype)
    labels = np.zeros((b, seq_len, n_tasks), dtype=np.int64)
    late = np.zeros((b, seq_len, 1 + n_tasks), dtype=dtype)
    valid = np.zeros(b, dtype=np.int64)
    ctx = np.zeros(b, dtype=np.int64)
    for r, seq in enumerate(chunk):
        n = len(seq)
        valid[r], ctx[r] = n, seq.context_len
        if not n:
            continue
        items[r, :n] = [e.features for e in seq.events]
        actions[r, :n] = [e.action_features for e in seq.events]
        labels[r, :n] = seq.labels()
        late[r, :n] = synth_late_fusion(seq, seq.context_len if isolate else None)
    return SequenceBatch(items, actions, labels, ctx, valid, late, [s.user_id for s in chunk])
