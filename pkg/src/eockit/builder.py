"""Deterministic linkage of a patient's events into episodes of care.

Linkage rules, applied in order:

1. Events sharing a non-empty encounter_id always land in one episode.
2. An ADMISSION opens an inpatient episode. Its absorption span runs from the
   admission to the matching discharge plus the grace window; any event
   without an encounter_id whose timestamp falls inside the span joins the
   episode. An ADMISSION with no DISCHARGE leaves the episode open and its
   span unbounded. When a later ADMISSION for the same patient starts before
   a prior span ends, the prior span is cut at the later admission (logged as
   an anomaly); events at or after the later admission belong to the later
   episode.
3. Events still unassigned form outpatient episodes by session gap:
   consecutive events no further apart than the gap share an episode.

An unkeyed ADMISSION is matched with the earliest unkeyed DISCHARGE at or
after it; keyed admissions pair with the discharge in their encounter group.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from datetime import timedelta
from typing import Dict, List, Optional, Sequence

from .model import (
    Event, EpisodeOfCare, ValidationError, derive_fields, event_sort_key,
    make_episode_id,
)
from .repository import Repository

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LinkagePolicy:
    grace_window_hours: int = 72
    session_gap_hours: int = 24

    def __post_init__(self):
        if self.grace_window_hours < 0 or self.session_gap_hours < 0:
            raise ValidationError("linkage windows must be nonnegative")


@dataclass(frozen=True)
class BuildReport:
    episodes_written: int = 0
    episodes_tombstoned: int = 0


class _Block:
    """A growing episode candidate."""

    def __init__(self, events: Optional[List[Event]] = None):
        self.events: List[Event] = list(events or [])

    def add(self, ev: Event) -> None:
        self.events.append(ev)

    @property
    def admissions(self) -> List[Event]:
        return [e for e in self.events if e.event_type == "ADMISSION"]

    @property
    def discharges(self) -> List[Event]:
        return [e for e in self.events if e.event_type == "DISCHARGE"]


def link_events(events: Sequence[Event], policy: LinkagePolicy) -> List[EpisodeOfCare]:
    """Partition one patient's time-ordered events into episodes."""
    events = list(events)
    if not events:
        return []
    keys = [event_sort_key(e) for e in events]
    if keys != sorted(keys):
        raise ValidationError("link_events requires events sorted by (timestamp, event_id)")
    patient_ids = {e.patient_id for e in events}
    if len(patient_ids) != 1:
        raise ValidationError("link_events requires events of exactly one patient")
    patient_id = events[0].patient_id
    grace = timedelta(hours=policy.grace_window_hours)

    # rule 1: seed blocks from encounter groups
    blocks: List[_Block] = []
    by_encounter: Dict[str, _Block] = {}
    unkeyed: List[Event] = []
    for ev in events:
        if ev.encounter_id:
            blk = by_encounter.get(ev.encounter_id)
            if blk is None:
                blk = _Block()
                by_encounter[ev.encounter_id] = blk
                blocks.append(blk)
            blk.add(ev)
        else:
            unkeyed.append(ev)

    # rule 2 pairing: unkeyed ADMISSIONs seed inpatient blocks and consume the
    # next unmatched unkeyed DISCHARGE that precedes any later admission
    unkeyed_adms = [e for e in unkeyed if e.event_type == "ADMISSION"]
    unkeyed_diss = [e for e in unkeyed if e.event_type == "DISCHARGE"]
    consumed = set()
    for i, adm in enumerate(unkeyed_adms):
        blk = _Block([adm])
        blocks.append(blk)
        consumed.add(adm.event_id)
        next_adm_ts = unkeyed_adms[i + 1].timestamp if i + 1 < len(unkeyed_adms) else None
        for dis in unkeyed_diss:
            if dis.event_id in consumed or dis.timestamp < adm.timestamp:
                continue
            if next_adm_ts is not None and dis.timestamp >= next_adm_ts:
                break
            blk.add(dis)
            consumed.add(dis.event_id)
            break

    # absorption spans from blocks with an admission, truncated at the next
    # admission (the overlap anomaly rule)
    spanned = [b for b in blocks if b.admissions]
    spanned.sort(key=lambda b: event_sort_key(min(b.admissions, key=event_sort_key)))
    spans = []  # (start, end_inclusive or None, truncated_at or None, block)
    for idx, blk in enumerate(spanned):
        start = min(a.timestamp for a in blk.admissions)
        dis = blk.discharges
        end = max(d.timestamp for d in dis) + grace if dis else None
        cut = None
        if idx + 1 < len(spanned):
            nxt = min(a.timestamp for a in spanned[idx + 1].admissions)
            if end is None or nxt < end:
                if end is not None:
                    log.warning("overlapping admissions for patient %s: episode at %s "
                                "cut at %s", patient_id, start, nxt)
                end = nxt
                cut = nxt
        spans.append((start, end, cut, blk))

    leftovers: List[Event] = []
    for ev in unkeyed:
        if ev.event_id in consumed:
            continue
        placed = False
        for start, end, cut, blk in spans:
            if ev.timestamp < start:
                continue
            if end is None:
                placed = True
            elif cut is not None:
                placed = ev.timestamp < end  # events at the cut go to the later episode
            else:
                placed = ev.timestamp <= end
            if placed:
                blk.add(ev)
                break
        if not placed:
            leftovers.append(ev)

    # rule 3: session-gap clustering of whatever remains
    gap = timedelta(hours=policy.session_gap_hours)
    session: Optional[_Block] = None
    for ev in leftovers:
        if session is not None and ev.timestamp - session.events[-1].timestamp <= gap:
            session.add(ev)
        else:
            session = _Block([ev])
            blocks.append(session)

    episodes = []
    for blk in blocks:
        evs = tuple(sorted(blk.events, key=event_sort_key))
        eid = make_episode_id(patient_id, evs[0].event_id)
        episodes.append(derive_fields(EpisodeOfCare(
            episode_id=eid, patient_id=patient_id, events=evs)))
    episodes.sort(key=lambda e: (event_sort_key(e.events[0])))
    return episodes


def _relink_patients(repo: Repository, patient_ids, policy: LinkagePolicy) -> BuildReport:
    written = 0
    tombstoned = 0
    for pid in sorted(patient_ids):
        events = repo.scan_events(pid)
        episodes = link_events(events, policy)
        new_ids = {e.episode_id for e in episodes}
        stale = [eid for eid in repo.episode_ids()
                 if (ep := repo.get_episode(eid)) is not None
                 and ep.patient_id == pid and eid not in new_ids]
        written += repo.put_episodes(episodes, tombstones=stale)
        tombstoned += len(stale)
    return BuildReport(episodes_written=written, episodes_tombstoned=tombstoned)


def rebuild_all(repo: Repository, policy: LinkagePolicy = LinkagePolicy()) -> BuildReport:
    """Relink every patient from scratch; stale episode ids are tombstoned."""
    report = _relink_patients(repo, repo.all_patient_ids(), policy)
    repo.clear_dirty(repo.dirty_patients())
    return report


def apply_increment(repo: Repository, policy: LinkagePolicy = LinkagePolicy()) -> BuildReport:
    """Relink only dirty patients; equivalent in outcome to rebuild_all."""
    dirty = repo.dirty_patients()
    report = _relink_patients(repo, dirty, policy)
    repo.clear_dirty(dirty)
    return report
