import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgefaas.docstore import (
    Document,
    DuplicateQueryId,
    Operator,
    PercolatorStore,
    QueryDoesNotMatch,
    StoredQuery,
    SyntheticCorpus,
    brute_force_percolate,
    score,
    tokenize,
)

Q1 = StoredQuery("q1", ("edge", "computing"), Operator.AND)
Q2 = StoredQuery("q2", ("cloud", "fog"), Operator.OR)
DOC = Document("d", {"body": "Edge computing at the cloud boundary"})


def store_of(*queries):
    s = PercolatorStore()
    for q in queries:
        s.register_query(q)
    return s


def test_tokenize_examples():
    assert tokenize("Edge computing!") == ["edge", "computing"]
    assert tokenize("") == []
    assert tokenize("K3s-based, 2021") == ["k3s", "based", "2021"]


@given(st.text())
def test_tokenize_idempotent(text):
    tokens = tokenize(text)
    assert tokenize(" ".join(tokens)) == tokens
    assert all(tokenize(t) == [t] for t in tokens)


def test_register_and_duplicate():
    s = store_of(Q1)
    assert len(s) == 1
    with pytest.raises(DuplicateQueryId):
        s.register_query(StoredQuery("q1", ("other",)))


def test_query_terms_must_be_normal():
    with pytest.raises(ValueError):
        StoredQuery("bad", ("Edge",))
    with pytest.raises(ValueError):
        StoredQuery("bad", ())


def test_hand_evaluated_match():
    s = store_of(Q1, Q2)
    assert s.percolate(DOC) == [("q1", 1.0), ("q2", 0.5)]
    assert s.percolate(DOC, scoring=False) == [("q1", None), ("q2", None)]


def test_scores():
    assert score(Q1, DOC) == 1.0
    assert score(Q2, DOC) == 0.5
    assert score(StoredQuery("r", ("fog",)), Document("x", {"t": "fog FOG, fog"})) == 3.0
    with pytest.raises(QueryDoesNotMatch):
        score(Q1, Document("x", {"t": "nothing here"}))


def test_empty_document_matches_no_and_query():
    doc = Document("e", {"body": ""})
    assert store_of(Q1, StoredQuery("q3", ("edge",))).percolate(doc) == []


def test_multiple_fields():
    doc = Document("m", {"title": "Edge", "body": "computing"})
    assert store_of(Q1).percolate(doc) == [("q1", 1.0)]


def test_ties_sorted_by_id():
    s = store_of(StoredQuery("b", ("edge",)), StoredQuery("a", ("edge",)))
    assert s.percolate(DOC) == [("a", 1.0), ("b", 1.0)]


def test_ten_thousand_queries_against_oracle():
    corpus = SyntheticCorpus(seed=5)
    queries = corpus.queries(10_000)
    s = store_of(*queries)
    assert len(s) == 10_000
    for doc in corpus.documents(20):
        assert s.percolate(doc) == brute_force_percolate(queries, doc)


def test_scoring_toggle_over_random_docs():
    corpus = SyntheticCorpus(seed=9)
    s = store_of(*corpus.queries(1000))
    for doc in corpus.documents(1000):
        on = s.percolate(doc, scoring=True)
        off = s.percolate(doc, scoring=False)
        assert sorted(q for q, _ in on) == [q for q, _ in off]


def test_determinism():
    corpus = SyntheticCorpus(seed=2)
    queries = corpus.queries(300)
    docs = corpus.documents(30)
    shuffled = list(queries)
    random.Random(0).shuffle(shuffled)
    a, b = store_of(*queries), store_of(*shuffled)
    assert [repr(a.percolate(d)) for d in docs] == [repr(b.percolate(d)) for d in docs]


def test_cost_grows_with_scoring():
    s = store_of(Q1, Q2)
    _, off = s.percolate_with_cost(DOC, scoring=False)
    _, on = s.percolate_with_cost(DOC, scoring=True)
    assert on > off > 0


def test_synthetic_corpus_reproducible():
    a, b = SyntheticCorpus(3), SyntheticCorpus(3)
    assert a.queries(50) == b.queries(50)
    assert a.documents(5) == b.documents(5)


words = st.sampled_from(["edge", "cloud", "fog", "rpi", "vm", "k3s", "nats", "faas"])
queries_st = st.lists(
    st.tuples(st.lists(words, min_size=1, max_size=3, unique=True), st.sampled_from(list(Operator))),
    max_size=200,
)
docs_st = st.lists(st.lists(words, max_size=12).map(" ".join), min_size=1, max_size=50)


@settings(max_examples=60, deadline=None)
@given(queries_st, docs_st, st.booleans())
def test_oracle_equivalence(raw_queries, raw_docs, scoring):
    queries = [StoredQuery(f"q{i}", tuple(terms), op) for i, (terms, op) in enumerate(raw_queries)]
    s = store_of(*queries)
    for j, text in enumerate(raw_docs):
        doc = Document(f"d{j}", {"body": text})
        assert s.percolate(doc, scoring) == brute_force_percolate(queries, doc, scoring)
