import itertools
import math
import random
from datetime import datetime, timezone

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tempo.semcache import (
    CacheConfig,
    CacheContractError,
    Decision,
    FlatIndex,
    ReferenceEmbedder,
    ReferenceJudger,
    SemanticCache,
    window_compatible,
)
from tempo.temporal import TemporalBucket, TimeWindow

from conftest import cq

T0 = datetime(2020, 6, 10, tzinfo=timezone.utc)


class KeyEmbedder:
    """Text "k<i>" maps to basis vector i, so distinct keys never retrieve each other."""

    def __init__(self, dim=16):
        self.dim = dim

    def embed(self, text):
        v = np.zeros(self.dim)
        v[int(text.split()[0][1:])] = 1.0
        return v


class ExactJudger:
    def score(self, q, a, new):
        return 1.0 if q == new else 0.0


def key_cache(capacity):
    cfg = CacheConfig(capacity=capacity, embedding_dim=16)
    return SemanticCache(cfg, KeyEmbedder(), ExactJudger(), now=lambda: T0)


# -- reference scorers -------------------------------------------------------


def test_reference_embedding_is_unit_and_stable():
    e = ReferenceEmbedder(256)
    v = e.embed("Chiller 6 tonnage")
    assert v.shape == (256,)
    assert math.isclose(float(np.linalg.norm(v)), 1.0)
    # whitespace and case normalization
    assert np.allclose(v, e.embed("  chiller   6 TONNAGE "))


def test_reference_embedding_frozen_buckets():
    # frozen from an independent CRC-32 trigram count
    import zlib

    text = "abc abc"
    norm = " abc abc "
    counts = {}
    for i in range(len(norm) - 2):
        b = zlib.crc32(norm[i:i + 3].encode()) % 256
        counts[b] = counts.get(b, 0) + 1
    v = ReferenceEmbedder(256).embed(text)
    n = math.sqrt(sum(c * c for c in counts.values()))
    for b, c in counts.items():
        assert math.isclose(v[b], c / n)


def test_reference_judge_jaccard():
    j = ReferenceJudger()
    assert j.score("a b c", "ignored", "a b d") == pytest.approx(2 / 4)
    assert j.score("Chiller 6!", "", "chiller 6") == 1.0
    assert j.score("", "", "") == 0.0


def test_config_validation():
    with pytest.raises(ValueError):
        CacheConfig(tau_sim=0.9, tau_judge=0.8)
    with pytest.raises(ValueError):
        CacheConfig(capacity=0)
    with pytest.raises(ValueError):
        CacheConfig.from_mapping({"tau": 0.5})
    c = CacheConfig()
    assert (c.tau_sim, c.tau_judge, c.top_k, c.capacity) == (0.75, 0.92, 5, 50)


# -- lookup ----------------------------------------------------------------------


def test_exact_repeat_hits_and_counts():
    cache = SemanticCache()
    q = "List the failure modes of Chiller 6"
    eid = cache.insert(cq(q), "answer")
    out = cache.lookup(cq(q))
    assert out.decision is Decision.HIT and out.answer == "answer" and out.matched_entry == eid
    assert out.judge_score == 1.0 and out.similarity == pytest.approx(1.0)
    assert cache.get(eid).hit_count == 1


def test_unrelated_query_misses():
    cache = SemanticCache()
    cache.insert(cq("List the failure modes of Chiller 6"), "a")
    assert cache.lookup(cq("Which work orders are open for Pump 4 at site MAIN")).decision is Decision.MISS


def test_empty_cache_misses():
    out = SemanticCache().lookup(cq("anything at all"))
    assert out.decision is Decision.MISS and out.candidates == 0


def test_volatile_bypass_and_never_inserted():
    cache = SemanticCache()
    v = cq("What is the current status of Chiller 6?")
    assert v.bucket is TemporalBucket.VOLATILE
    assert cache.lookup(v).decision is Decision.BYPASS
    with pytest.raises(CacheContractError):
        cache.insert(v, "x")
    assert len(cache) == 0


def test_window_gate_blocks_shifted_dates():
    base = "Tonnage readings for Chiller 6 from 2020-06-01 to 2020-06-07"
    shifted = "Tonnage readings for Chiller 6 from 2020-06-02 to 2020-06-07"
    gated = SemanticCache(CacheConfig(tau_judge=0.75))
    open_ = SemanticCache(CacheConfig(tau_judge=0.75, window_gate=False))
    for c in (gated, open_):
        c.insert(cq(base), "a")
    assert open_.lookup(cq(shifted)).decision is Decision.HIT
    assert gated.lookup(cq(shifted)).decision is Decision.MISS
    assert gated.lookup(cq(base)).decision is Decision.HIT


def test_static_entry_does_not_serve_anchored_query():
    cache = SemanticCache(CacheConfig(tau_judge=0.75))
    cache.insert(cq("Tonnage readings for Chiller 6"), "a")
    assert cache.lookup(cq("Tonnage readings for Chiller 6 on 2020-06-01")).decision is Decision.MISS


def test_window_compatible_day_granular():
    utc = timezone.utc
    w1 = TimeWindow(datetime(2020, 6, 1, tzinfo=utc), datetime(2020, 6, 2, tzinfo=utc))
    w2 = TimeWindow(datetime(2020, 6, 1, 5, tzinfo=utc), datetime(2020, 6, 2, 7, tzinfo=utc))
    assert window_compatible(None, None)
    assert not window_compatible(w1, None) and not window_compatible(None, w1)
    assert window_compatible(w1, w2)
    assert not window_compatible(w1, TimeWindow(w1.start, datetime(2020, 6, 3, tzinfo=utc)))


def test_scorer_failures_degrade_to_miss():
    class Boom:
        def embed(self, text):
            raise RuntimeError("down")

    class BadJudge:
        def score(self, *a):
            raise RuntimeError("down")

    cache = SemanticCache(embedder=Boom(), judger=ReferenceJudger())
    out = cache.lookup(cq("List failure modes"))
    assert out.decision is Decision.MISS and "embedder" in out.diagnostic
    cache = SemanticCache(judger=BadJudge())
    cache.insert(cq("List failure modes"), "a")
    assert cache.lookup(cq("List failure modes")).decision is Decision.MISS


def test_best_judge_score_wins():
    cache = SemanticCache(CacheConfig(tau_sim=0.5, tau_judge=0.6))
    cache.insert(cq("failure modes of Chiller 6"), "six")
    cache.insert(cq("list the failure modes of Chiller 9"), "nine")
    out = cache.lookup(cq("list the failure modes of Chiller 9 please"))
    assert out.answer == "nine"


# -- LCFU eviction ------------------------------------------------------------------


class LcfuOracle:
    """Independent model: fewest hits, then least recently touched, then oldest."""

    def __init__(self, capacity):
        self.capacity = capacity
        self.hits = {}
        self.order = []  # least recently touched first

    def insert(self, key):
        victim = None
        if len(self.hits) >= self.capacity:
            low = min(self.hits.values())
            victim = next(k for k in self.order if self.hits[k] == low)
            self.order.remove(victim)
            del self.hits[victim]
        self.hits[key] = 0
        self.order.append(key)
        return victim

    def hit(self, key):
        self.hits[key] += 1
        self.order.remove(key)
        self.order.append(key)


def replay(ops, capacity):
    cache, oracle = key_cache(capacity), LcfuOracle(capacity)
    text_of = {}
    for op, k in ops:
        if op == "insert":
            if k in oracle.hits:
                continue
            before = {e.query_text for e in cache.entries()}
            oracle_victim = oracle.insert(k)
            cache.insert(cq(f"k{k} static"), "a")
            text_of[k] = f"k{k} static"
            after = {e.query_text for e in cache.entries()}
            gone = before - after
            assert gone == ({text_of[oracle_victim]} if oracle_victim is not None else set())
        elif k in oracle.hits:
            oracle.hit(k)
            assert cache.lookup(cq(f"k{k} static")).decision is Decision.HIT
        assert len(cache) <= capacity
    assert {e.query_text for e in cache.entries()} == {text_of[k] for k in oracle.hits}


ops_strategy = st.lists(
    st.tuples(st.sampled_from(["insert", "hit"]), st.integers(0, 15)), max_size=60
)


@settings(max_examples=300, deadline=None)
@given(ops_strategy, st.integers(1, 10))
def test_lcfu_matches_oracle(ops, capacity):
    replay(ops, capacity)


@pytest.mark.parametrize("n", range(2, 6))
def test_lcfu_exhaustive_tie_permutations(n):
    # fill to capacity, touch the entries in every order (ties on hit count),
    # then insert one more and compare the victim with the oracle
    for perm in itertools.permutations(range(n)):
        for extra_hits in ((), (perm[-1],), (perm[0], perm[0])):
            ops = [("insert", k) for k in range(n)]
            ops += [("hit", k) for k in perm] + [("hit", k) for k in extra_hits]
            ops.append(("insert", n))
            replay(ops, n)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 15), max_size=80), st.integers(1, 10))
def test_capacity_bound(keys, capacity):
    cache = key_cache(capacity)
    for k in keys:
        cache.insert(cq(f"k{k} static"), "a")
        assert len(cache) <= capacity
    assert len(cache) == min(len(keys), capacity)
    assert cache.evictions == max(0, len(keys) - capacity)


def test_evict_empty_raises():
    with pytest.raises(CacheContractError):
        SemanticCache().evict_one()


# -- index vs exact scan ------------------------------------------------------------


def exact_top_k(rows, query, k):
    scored = []
    for pos, (eid, v) in enumerate(rows):
        dot = math.fsum(a * b for a, b in zip(v, query))
        scored.append((-dot, pos, eid, dot))
    scored.sort()
    return [(eid, dot) for _, _, eid, dot in scored[:k]]


def unit(xs):
    v = np.asarray(xs, dtype=np.float64)
    n = np.linalg.norm(v)
    return v / n if n else None


vec8 = st.lists(st.integers(-5, 5), min_size=8, max_size=8)


@settings(max_examples=300, deadline=None)
@given(st.lists(vec8, min_size=0, max_size=30), vec8, st.integers(1, 8), st.data())
def test_index_matches_exact_scan(raw, q, k, data):
    qv = unit(q)
    if qv is None:
        return
    idx = FlatIndex(8)
    rows = []
    for i, r in enumerate(raw):
        v = unit(r)
        if v is None:
            continue
        idx.add(f"e{i}", v)
        rows.append((f"e{i}", v))
    if rows and data.draw(st.booleans()):
        gone = data.draw(st.sampled_from([e for e, _ in rows]))
        idx.remove(gone)
        rows = [(e, v) for e, v in rows if e != gone]
    got = idx.search(qv, k)
    want = exact_top_k(rows, qv, k)
    assert len(got) == len(want)
    sims = {e: math.fsum(a * b for a, b in zip(v, qv)) for e, v in rows}
    for (ge, gs), (_, ws) in zip(got, want):
        assert gs == pytest.approx(ws, abs=1e-12)
        assert sims[ge] == pytest.approx(gs, abs=1e-12)
    # same candidates up to floating-point near-ties at the cut-off
    if want:
        kth = want[-1][1]
        must = {e for e, v in sims.items() if v > kth + 1e-12}
        assert must <= {e for e, _ in got}
        got_sims = [sims[e] for e, _ in got]
        assert all(a >= b - 1e-12 for a, b in zip(got_sims, got_sims[1:]))


def test_index_exact_ties_keep_insertion_order():
    idx = FlatIndex(4)
    v = unit([1, 2, 0, 1])
    for i in (5, 1, 3):
        idx.add(f"e{i}", v)
    idx.add("far", unit([0, 0, 1, 0]))
    assert [e for e, _ in idx.search(v, 3)] == ["e5", "e1", "e3"]


def test_cache_candidates_match_exact_scan_after_eviction():
    rng = random.Random(7)
    words = "chiller pump ahu tonnage vibration flow power site main failure mode sensor".split()
    cache = SemanticCache(CacheConfig(capacity=12))
    for i in range(30):
        cache.insert(cq(" ".join(rng.choice(words) for _ in range(6)) + f" {i}"), "a")
    e = ReferenceEmbedder()
    rows = [(x.entry_id, e.embed(x.query_text)) for x in sorted(cache.entries(), key=lambda x: x.insert_seq)]
    q = e.embed("chiller tonnage failure sensor")
    got = cache.candidates(q)
    want = exact_top_k(rows, q, 5)
    assert [g for g, _ in got] == [w for w, _ in want]
