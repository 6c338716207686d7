import math
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import activity_naive, entropy_naive

from mesodiff import netstruct as ns
from mesodiff import signals as sg

HOUR = sg.SECONDS_PER_HOUR


def blog_graph():
    """Three 4-cliques in a chain; vertex labels are site names."""
    edges = []
    for b in range(3):
        base = 4 * b
        edges += [(base + i, base + j) for i in range(4) for j in range(i + 1, 4)]
    edges += [(3, 4), (7, 8)]
    g = ns.Graph.from_edges(12, edges, labels=[f"site{i}" for i in range(12)])
    part = ns.CommunityPartition.from_assignment(g, [v // 4 for v in range(12)])
    return g, part, ns.k_shell_decomposition(g)


def series(pairs, label=None):
    return sg.EventTimeSeries.from_mentions("e", [(h * HOUR, f"site{v}") for h, v in pairs], label)


# parsing

def test_parse_sorts_stably(tmp_path):
    p = tmp_path / "e.events"
    p.write_text("#event m1 alarming\n20\tb\n10\ta\n10\tc\n")
    ev = sg.parse_event_series(p)
    assert ev.times == (10.0, 10.0, 20.0) and ev.sites == ("a", "c", "b") and ev.label == "alarming"


def test_parse_errors(tmp_path):
    p = tmp_path / "e.events"
    p.write_text("#event m1\n")
    with pytest.raises(ValueError, match="no mentions"):
        sg.parse_event_series(p)
    p.write_text("")
    with pytest.raises(ValueError, match="empty"):
        sg.parse_event_file(p)
    p.write_text("#event m1\n1\ta\nnot-a-time\tb\n")
    with pytest.raises(ValueError, match=":3:"):
        sg.parse_event_series(p)
    p.write_text("#event m1 maybe\n1\ta\n")
    with pytest.raises(ValueError, match=":1:"):
        sg.parse_event_series(p)
    p.write_text("#event m1\n")
    assert len(sg.parse_event_file(p, allow_empty=True)[0]) == 0


@settings(max_examples=40)
@given(st.lists(st.tuples(st.floats(0, 1e7, allow_nan=False), st.sampled_from(["a", "b.com", "c/x"])),
                max_size=20), st.sampled_from([None, sg.ALARMING, sg.NOT_ALARMING]))
def test_round_trip(tmp_path_factory, mentions, label):
    ev = sg.EventTimeSeries.from_mentions("ev7", mentions, label)
    p = tmp_path_factory.mktemp("rt") / "e.events"
    sg.write_event_series([ev], p)
    back = sg.parse_event_file(p, allow_empty=True)[0]
    assert back == ev


def test_unresolved_sites_counted():
    g, _, _ = blog_graph()
    ev = sg.EventTimeSeries.from_mentions("e", [(0, "site1"), (5, "elsewhere"), (9, "site2")])
    assert sg.unresolved_count(ev, g) == 1
    assert list(sg.resolve_sites(ev, g)) == [1, sg.UNRESOLVED, 2]


# activity

def test_activity_examples():
    g, _, _ = blog_graph()
    assert sg.activity_labels(series([]), g, 1.0).active == ()
    one = sg.activity_labels(series([(0, 5)]), g, 1.0)
    assert one.active == (frozenset({5}),)
    with pytest.raises(ValueError):
        sg.activity_labels(series([]), g, 0.0)


@settings(max_examples=50)
@given(st.lists(st.tuples(st.floats(0, 30), st.integers(0, 11)), max_size=30), st.floats(0.5, 6))
def test_activity_matches_scan(pairs, interval):
    g, _, _ = blog_graph()
    ev = series(pairs)
    got = sg.activity_labels(ev, g, interval)
    ref = activity_naive(list(ev.hours()), [int(s[4:]) for s in ev.sites], interval)
    as_dict = {k: set(s) for k, s in enumerate(got.active) if s}
    assert as_dict == ref


# counts and rates

def test_post_rate_examples():
    ev = series([(h, 0) for h in (0, 1, 2, 6)] + [(h, 1) for h in (7, 8, 9, 10, 11, 12)])
    assert sg.posts_count(ev, 12) == 10 and sg.posts_count(ev, 6) == 4
    assert sg.post_rate(ev, 12) == 1.0
    empty = series([])
    assert sg.posts_count(empty, 12) == 0 and sg.post_rate(empty, 12) == 0.0
    # trigger supplied at 0, all posts in (τ/2, τ]
    late = sg.EventTimeSeries.from_mentions("e", [(h * HOUR, "site1") for h in (7, 9, 11)], trigger=0.0)
    assert sg.post_rate(late, 12) == sg.posts_count(late, 12) / 6


def test_dispersion_and_core_examples():
    g, part, shells = blog_graph()
    same = series([(0, 5), (1, 5), (2, 5)])
    assert sg.community_dispersion(same, part, 12, g) == 1
    assert sg.k_core_count(same, shells, 12, g) in (0, 1)
    spread = series([(0, 0), (1, 5), (2, 10)])
    assert sg.community_dispersion(spread, part, 12, g) == part.community_count


@settings(max_examples=50)
@given(st.lists(st.tuples(st.floats(0, 48), st.integers(0, 11)), max_size=30), st.floats(1, 48))
def test_dispersion_core_match_set_union(pairs, tau):
    g, part, shells = blog_graph()
    ev = series(pairs)
    h = ev.hours()
    verts = {int(s[4:]) for s, t in zip(ev.sites, h) if t <= tau}
    assert sg.community_dispersion(ev, part, tau, g) == len({part.assignment[v] for v in verts})
    assert sg.k_core_count(ev, shells, tau, g) == sum(shells.shell_index[v] == shells.k_max for v in verts)


@settings(max_examples=40)
@given(st.lists(st.tuples(st.floats(0, 48), st.integers(0, 11)), max_size=30), st.floats(1, 24))
def test_counts_nondecreasing_in_tau(pairs, tau):
    g, part, shells = blog_graph()
    ev = series(pairs)
    for f in (lambda t: sg.posts_count(ev, t), lambda t: sg.community_dispersion(ev, part, t, g),
              lambda t: sg.k_core_count(ev, shells, t, g)):
        assert f(tau) <= f(2 * tau)


# entropy

def test_entropy_examples():
    g, part, _ = blog_graph()
    assert sg.blog_entropy(series([(0, 1), (1, 2)]), part, g) == 0.0
    assert sg.blog_entropy(series([(0, 0), (1, 4), (2, 8)]), part, g) == pytest.approx(math.log(3), abs=1e-12)
    be = sg.blog_entropy(series([(0, 0), (1, 1), (2, 4), (3, 8)]), part, g)
    assert be == pytest.approx(1.5 * math.log(2), abs=1e-12)
    assert sg.blog_entropy(series([]), part, g) == 0.0


@given(st.lists(st.integers(0, 50), min_size=1, max_size=8))
def test_entropy_matches_definition(counts):
    assert sg.entropy_of_counts(counts) == pytest.approx(entropy_naive(counts), abs=1e-12)
    assert 0 <= sg.entropy_of_counts(counts) <= math.log(len(counts)) + 1e-12
    assert sg.entropy_of_counts(counts[::-1]) == pytest.approx(sg.entropy_of_counts(counts), abs=1e-12)


def test_interval_entropies():
    g, part, _ = blog_graph()
    ev = series([(0.5, 0), (0.6, 4), (2.5, 8)])
    assert sg.interval_entropies(ev, part, g, 1.0, 4) == pytest.approx([math.log(2), 0, 0, 0], abs=1e-12)


# lexicons

def lex(scores, kind="valence"):
    return sg.Lexicon("lx", scores, kind)


def test_lexicon_score_examples():
    lx = lex({"good": 1.0, "bad": -1.0, "fine": 2.0}, "signed")
    assert sg.lexicon_score(Counter(), lx) == 0.0
    assert sg.lexicon_score(Counter({"good": 2, "fine": 1}), lx) == 2.0
    assert sg.lexicon_score(Counter({"zebra": 3}), lx) == 0.0
    assert sg.lexicon_score(Counter({"good": 2, "fine": 1}), lx, normalization="matched") == pytest.approx(4 / 3)


def test_lexicon_zero_sum_rejected():
    with pytest.raises(ValueError, match="matched"):
        sg.lexicon_score(Counter({"good": 1}), lex({"good": 1.0, "bad": -1.0}, "signed"))
    with pytest.raises(ValueError):
        lex({})


@given(st.dictionaries(st.sampled_from(["a", "b", "c", "z"]), st.integers(0, 9)),
       st.dictionaries(st.sampled_from(["a", "b", "c", "z"]), st.integers(0, 9)), st.integers(0, 5))
def test_lexicon_linear(x, y, k):
    lx = lex({"a": 1.5, "b": 2.0, "c": 0.25})
    lhs = sg.lexicon_score(_add(x, y, k), lx)
    assert lhs == pytest.approx(sg.lexicon_score(Counter(x), lx) + k * sg.lexicon_score(Counter(y), lx))


def _add(x, y, k):
    out = Counter(x)
    for w, c in y.items():
        out[w] += k * c
    return out


def test_load_lexicon_and_tokenize(tmp_path):
    p = tmp_path / "lx.tsv"
    p.write_text("# anew\nHappy\t8.2\nsad\t1.6\n")
    lx = sg.load_lexicon(p, name="anew")
    assert lx.scores == {"happy": 8.2, "sad": 1.6}
    assert sg.tokenize("Happy, happy-SAD day!") == Counter({"happy": 2, "sad": 1, "day": 1})


# assembly

def test_extract_empty_series():
    g, part, shells = blog_graph()
    fv = sg.extract_features(series([]), g, part, shells, 12.0)
    assert fv.values() == [0.0] * 5 and fv.names() == list(sg.DYNAMIC_FEATURES)


def test_extract_matches_ops():
    g, part, shells = blog_graph()
    ev = series([(0, 0), (3, 1), (7, 4), (11, 9), (30, 10)], label=sg.ALARMING)
    lx = lex({"storm": 2.0, "calm": 1.0})
    fv = sg.extract_features(ev, g, part, shells, 12.0, lexicons=[lx], documents=["storm storm calm"])
    assert fv.posts == 4 and fv.post_rate == 2 / 6 and fv.community_dispersion == 3
    assert fv.k_core_count == sg.k_core_count(ev, shells, 12.0, g)
    assert fv.blog_entropy == pytest.approx(entropy_naive([2, 1, 1]), abs=1e-12)
    assert fv.language == (("lx", 5 / 3),) and fv.label == sg.ALARMING
    doubled = sg.extract_features(series([(0, 0), (3, 1), (7, 4), (11, 9)]), g, part, shells, 24.0)
    assert doubled.posts == fv.posts and doubled.post_rate <= fv.post_rate / 2


def test_features_csv(tmp_path):
    g, part, shells = blog_graph()
    vs = [sg.extract_features(series([(0, 0), (1, 5)], sg.NOT_ALARMING), g, part, shells, 12.0)]
    p = tmp_path / "f.csv"
    sg.write_features_csv(vs, p)
    head, row = p.read_text().splitlines()
    assert head == "event_id,tau_hours,posts,post_rate,community_dispersion,k_core_count,blog_entropy,label"
    assert row.startswith("e,12.0,2,") and row.endswith(",not_alarming")
