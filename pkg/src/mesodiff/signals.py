"""Early-warning features computed from an event's mention time series.

Times in files are seconds; horizons ``tau`` are hours measured from the
trigger time (the first mention unless one is supplied).
"""
from __future__ import annotations

import csv
import math
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .netstruct import CommunityPartition, Graph, KShellDecomposition

ALARMING = "alarming"
NOT_ALARMING = "not_alarming"
LABELS = (ALARMING, NOT_ALARMING)
UNRESOLVED = -1
SECONDS_PER_HOUR = 3600.0

DYNAMIC_FEATURES = ("posts", "post_rate", "community_dispersion", "k_core_count", "blog_entropy")


@dataclass(frozen=True)
class EventTimeSeries:
    event_id: str
    times: tuple[float, ...]
    sites: tuple[str, ...]
    label: str | None = None
    trigger: float | None = None

    def __post_init__(self):
        if len(self.times) != len(self.sites):
            raise ValueError("times and sites differ in length")
        if any(b < a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("timestamps must be nondecreasing")
        if self.label is not None and self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")

    @classmethod
    def from_mentions(cls, event_id, mentions, label=None, trigger=None):
        """Sort (time, site) pairs by time; ties keep their input order."""
        ordered = sorted(mentions, key=lambda m: m[0])
        return cls(str(event_id), tuple(float(t) for t, _ in ordered),
                   tuple(str(s) for _, s in ordered), label, trigger)

    def __len__(self):
        return len(self.times)

    @property
    def start(self) -> float:
        if self.trigger is not None:
            return self.trigger
        return self.times[0] if self.times else 0.0

    def hours(self) -> np.ndarray:
        """Mention times in hours after the trigger."""
        return (np.asarray(self.times, dtype=np.float64) - self.start) / SECONDS_PER_HOUR

    def window(self, tau: float, start: float = 0.0) -> np.ndarray:
        """Mask of mentions with ``start <= t <= tau`` (hours)."""
        h = self.hours()
        return (h >= start) & (h <= tau)


def resolve_sites(series: EventTimeSeries, graph: Graph) -> np.ndarray:
    """Vertex index per mention; ``UNRESOLVED`` for unknown site labels."""
    index = graph.label_index()
    return np.array([index.get(s, UNRESOLVED) for s in series.sites], dtype=np.int64)


def unresolved_count(series: EventTimeSeries, graph: Graph) -> int:
    return int(np.sum(resolve_sites(series, graph) == UNRESOLVED))


# --------------------------------------------------------------------------
# file formats

def _parse_lines(lines, source: str, allow_empty: bool = False) -> list[EventTimeSeries]:
    events: list[EventTimeSeries] = []
    head, mentions = None, []

    def close():
        if head is not None:
            if not mentions and not allow_empty:
                raise ValueError(f"{source}: event {head[0]!r} has no mentions")
            events.append(EventTimeSeries.from_mentions(head[0], mentions, head[1]))

    for lineno, raw in enumerate(lines, 1):
        line = raw.rstrip("\n").rstrip("\r")
        if not line.strip():
            continue
        if line.startswith("#event"):
            close()
            parts = line.split()
            if len(parts) not in (2, 3):
                raise ValueError(f"{source}:{lineno}: malformed header {line!r}")
            label = parts[2] if len(parts) == 3 else None
            if label is not None and label not in LABELS:
                raise ValueError(f"{source}:{lineno}: unknown label {label!r}")
            head, mentions = (parts[1], label), []
            continue
        if line.startswith("#"):
            continue
        if head is None:
            raise ValueError(f"{source}:{lineno}: mention before any #event header")
        parts = line.split("\t") if "\t" in line else line.split()
        if len(parts) != 2:
            raise ValueError(f"{source}:{lineno}: expected 't_seconds<TAB>site', got {line!r}")
        try:
            t = float(parts[0])
        except ValueError:
            raise ValueError(f"{source}:{lineno}: bad timestamp {parts[0]!r}") from None
        if not math.isfinite(t):
            raise ValueError(f"{source}:{lineno}: non-finite timestamp")
        mentions.append((t, parts[1].strip()))
    close()
    if not events:
        raise ValueError(f"{source}: empty event file")
    return events


def parse_event_file(path, allow_empty: bool = False) -> list[EventTimeSeries]:
    """All events in a file; ``allow_empty`` accepts headers with no mentions."""
    with open(path) as fh:
        return _parse_lines(fh, str(path), allow_empty)


def parse_event_series(path) -> EventTimeSeries:
    events = parse_event_file(path)
    if len(events) != 1:
        raise ValueError(f"{path}: expected one event, found {len(events)}")
    return events[0]


def format_event_series(series: EventTimeSeries) -> str:
    head = f"#event {series.event_id}" + (f" {series.label}" if series.label else "")
    rows = [f"{t!r}\t{s}" for t, s in zip(series.times, series.sites)]
    return "\n".join([head, *rows]) + "\n"


def write_event_series(events, path) -> None:
    if isinstance(events, EventTimeSeries):
        events = [events]
    with open(path, "w") as fh:
        for ev in events:
            fh.write(format_event_series(ev))


# --------------------------------------------------------------------------
# activity and dynamics features

@dataclass(frozen=True)
class BlogGraphSeries:
    graph: Graph
    active: tuple[frozenset, ...]
    interval_hours: float


def activity_labels(series: EventTimeSeries, graph: Graph, interval_hours: float) -> BlogGraphSeries:
    """Vertex ``v`` is active in interval ``k`` iff a mention on ``v`` falls in
    ``[k·Δ, (k+1)·Δ)`` hours after the trigger."""
    if interval_hours <= 0:
        raise ValueError("interval_hours must be positive")
    verts = resolve_sites(series, graph)
    h = series.hours()
    keep = (verts != UNRESOLVED) & (h >= 0)
    if not keep.any():
        return BlogGraphSeries(graph, (), interval_hours)
    bins = np.floor(h[keep] / interval_hours).astype(np.int64)
    sets = [set() for _ in range(int(bins.max()) + 1)]
    for b, v in zip(bins, verts[keep]):
        sets[b].add(int(v))
    return BlogGraphSeries(graph, tuple(frozenset(s) for s in sets), interval_hours)


def posts_count(series: EventTimeSeries, tau: float) -> int:
    if tau <= 0:
        raise ValueError("tau must be positive")
    return int(np.count_nonzero(series.window(tau)))


def post_rate(series: EventTimeSeries, tau: float) -> float:
    """(#posts(τ) − #posts(τ/2)) / (τ/2), in posts per hour."""
    return (posts_count(series, tau) - posts_count(series, tau / 2.0)) / (tau / 2.0)


def _window_vertices(series, graph, tau, start=0.0) -> np.ndarray:
    verts = resolve_sites(series, graph)
    m = series.window(tau, start) & (verts != UNRESOLVED)
    return verts[m]


def community_dispersion(series: EventTimeSeries, partition: CommunityPartition, tau: float,
                         graph: Graph) -> int:
    """Distinct communities holding at least one post by τ."""
    verts = _window_vertices(series, graph, tau)
    a = np.asarray(partition.assignment, dtype=np.int64)
    return int(len(np.unique(a[verts])))


def k_core_count(series: EventTimeSeries, shells: KShellDecomposition, tau: float, graph: Graph) -> int:
    """Distinct k_max-shell vertices with at least one post by τ."""
    verts = np.unique(_window_vertices(series, graph, tau))
    s = np.asarray(shells.shell_index, dtype=np.int64)
    return int(np.count_nonzero(s[verts] == shells.k_max))


def entropy_of_counts(counts) -> float:
    """−Σ f log f in nats, with 0·log 0 = 0 and an empty count vector giving 0."""
    c = np.asarray(counts, dtype=np.float64)
    total = c.sum()
    if total <= 0:
        return 0.0
    f = c[c > 0] / total
    return float(-(f * np.log(f)).sum())


def blog_entropy(series: EventTimeSeries, partition: CommunityPartition, graph: Graph,
                 interval: tuple[float, float] | None = None) -> float:
    """Entropy of posts over communities for mentions in ``[start, end]`` hours
    (all mentions when ``interval`` is None)."""
    verts = resolve_sites(series, graph)
    mask = verts != UNRESOLVED
    if interval is not None:
        mask &= series.window(interval[1], interval[0])
    a = np.asarray(partition.assignment, dtype=np.int64)
    counts = np.bincount(a[verts[mask]], minlength=partition.community_count)
    return entropy_of_counts(counts)


def interval_entropies(series, partition, graph, interval_hours: float, n_intervals: int) -> np.ndarray:
    """Per-interval BE over ``[k·Δ, (k+1)·Δ)``; empty intervals give 0."""
    verts = resolve_sites(series, graph)
    h = series.hours()
    keep = (verts != UNRESOLVED) & (h >= 0)
    bins = np.floor(h[keep] / interval_hours).astype(np.int64)
    a = np.asarray(partition.assignment, dtype=np.int64)[verts[keep]]
    out = np.zeros(n_intervals)
    for k in range(n_intervals):
        out[k] = entropy_of_counts(np.bincount(a[bins == k], minlength=partition.community_count))
    return out


# --------------------------------------------------------------------------
# language features

@dataclass(frozen=True)
class Lexicon:
    name: str
    scores: dict = field(hash=False)
    kind: str = "valence"  # or "signed"

    def __post_init__(self):
        if not self.scores:
            raise ValueError("lexicon is empty")
        if not all(math.isfinite(float(v)) for v in self.scores.values()):
            raise ValueError("lexicon scores must be finite")
        if self.kind not in ("valence", "signed"):
            raise ValueError(f"unknown lexicon kind {self.kind!r}")


def load_lexicon(path, name: str | None = None, kind: str = "valence") -> Lexicon:
    scores = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'word<TAB>score'")
            try:
                scores[parts[0].lower()] = float(parts[1])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: bad score {parts[1]!r}") from None
    return Lexicon(name or str(path), scores, kind)


_TOKEN = re.compile(r"[^0-9a-z]+")


def tokenize(text: str) -> Counter:
    return Counter(w for w in _TOKEN.split(text.lower()) if w)


def lexicon_score(counts, lexicon: Lexicon, normalization: str = "lexicon_sum") -> float:
    """sᵀx / sᵀ1 by default; ``normalization="matched"`` divides sᵀx by the
    number of document words found in the lexicon instead."""
    s = lexicon.scores
    num = float(sum(s[w] * c for w, c in counts.items() if w in s))
    if normalization == "lexicon_sum":
        den = float(sum(s.values()))
        if den == 0.0:
            raise ValueError("lexicon scores sum to zero; use normalization='matched'")
        return num / den
    if normalization == "matched":
        matched = sum(c for w, c in counts.items() if w in s)
        return num / matched if matched else 0.0
    raise ValueError(f"unknown normalization {normalization!r}")


# --------------------------------------------------------------------------
# feature assembly

@dataclass(frozen=True)
class FeatureVector:
    event_id: str
    tau: float
    posts: int
    post_rate: float
    community_dispersion: int
    k_core_count: int
    blog_entropy: float
    language: tuple[tuple[str, float], ...] = ()
    label: str | None = None

    def values(self) -> list[float]:
        return [float(self.posts), self.post_rate, float(self.community_dispersion),
                float(self.k_core_count), self.blog_entropy] + [v for _, v in self.language]

    def names(self) -> list[str]:
        return list(DYNAMIC_FEATURES) + [n for n, _ in self.language]


def extract_features(series: EventTimeSeries, graph: Graph, partition: CommunityPartition,
                     shells: KShellDecomposition, tau: float, lexicons=(), documents=None,
                     normalization: str = "lexicon_sum") -> FeatureVector:
    """Cumulative-by-τ features; language scores only when documents are given.

    ``documents`` is a list of texts (or a word Counter) for the event.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    lang = ()
    if documents is not None and lexicons:
        if isinstance(documents, Counter):
            bag = documents
        else:
            bag = Counter()
            for d in documents:
                bag.update(tokenize(d))
        lang = tuple((lx.name, lexicon_score(bag, lx, normalization)) for lx in lexicons[:4])
    return FeatureVector(
        series.event_id, float(tau),
        posts_count(series, tau), post_rate(series, tau),
        community_dispersion(series, partition, tau, graph),
        k_core_count(series, shells, tau, graph),
        blog_entropy(series, partition, graph, (0.0, tau)),
        lang, series.label,
    )


def feature_columns(vectors) -> list[str]:
    names = vectors[0].names() if vectors else list(DYNAMIC_FEATURES)
    return ["event_id", "tau_hours", *names, "label"]


def write_features_csv(vectors, path) -> None:
    cols = feature_columns(vectors)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for v in vectors:
            if v.names() != cols[2:-1]:
                raise ValueError("feature vectors have differing columns")
            w.writerow([v.event_id, repr(v.tau), *(repr(x) if isinstance(x, float) else x
                                                   for x in _raw_values(v)), v.label or ""])


def _raw_values(v: FeatureVector):
    return [v.posts, float(v.post_rate), v.community_dispersion, v.k_core_count,
            float(v.blog_entropy)] + [float(x) for _, x in v.language]
