"""Percolation store: documents are matched against registered queries.

Queries are AND/OR term lists kept in an inverted index from term to
query id, so a document only has to check queries sharing a term with it.
"""

from __future__ import annotations

import bisect
import enum
import itertools
import random
import threading
from collections import Counter
from dataclasses import dataclass

from .errors import EdgeFaasError

# work units charged per percolation: a fixed parse cost, a small cost per
# candidate query and, with scoring on, a ranking cost per matched query
BASE_WORK = 5.0
CANDIDATE_WORK = 0.01
SCORING_WORK = 6.0


class DocstoreError(EdgeFaasError):
    pass


class DuplicateQueryId(DocstoreError):
    pass


class QueryDoesNotMatch(DocstoreError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase, split on every non-alphanumeric codepoint, drop empties."""
    return ["".join(g) for alnum, g in itertools.groupby(text.lower(), str.isalnum) if alnum]


class Operator(str, enum.Enum):
    AND = "AND"
    OR = "OR"


@dataclass(frozen=True)
class StoredQuery:
    id: str
    terms: tuple[str, ...]
    operator: Operator = Operator.AND

    def __post_init__(self) -> None:
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(self, "operator", Operator(self.operator))
        if not self.terms:
            raise ValueError("a query needs at least one term")
        for t in self.terms:
            if tokenize(t) != [t]:
                raise ValueError(f"term {t!r} is not tokenizer-normal")

    def matches(self, tf: Counter) -> bool:
        if self.operator is Operator.AND:
            return all(tf[t] > 0 for t in self.terms)
        return any(tf[t] > 0 for t in self.terms)


@dataclass(frozen=True)
class Document:
    id: str
    fields: dict

    def __post_init__(self) -> None:
        if not self.fields:
            raise ValueError("a document needs at least one text field")

    def tokens(self) -> list[str]:
        return [tok for name in self.fields for tok in tokenize(str(self.fields[name]))]


def term_frequencies(doc: Document) -> Counter:
    return Counter(doc.tokens())


def score(q: StoredQuery, doc: Document | Counter) -> float:
    """Mean term frequency of the query's terms in the document."""
    tf = doc if isinstance(doc, Counter) else term_frequencies(doc)
    if not q.matches(tf):
        raise QueryDoesNotMatch(q.id)
    return sum(tf[t] for t in q.terms) / len(q.terms)


Match = tuple[str, float | None]


class PercolatorStore:
    def __init__(self) -> None:
        self.queries: dict[str, StoredQuery] = {}
        self._postings: dict[str, frozenset[str]] = {}
        self._write_lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.queries)

    def register_query(self, q: StoredQuery) -> None:
        with self._write_lock:
            if q.id in self.queries:
                raise DuplicateQueryId(q.id)
            # query first, then postings: a reader that finds the id can resolve it
            self.queries[q.id] = q
            for term in set(q.terms):
                self._postings[term] = self._postings.get(term, frozenset()) | {q.id}

    def percolate_with_cost(self, doc: Document, scoring: bool = True) -> tuple[list[Match], float]:
        """Matches plus the work units the percolation costs."""
        postings, queries = self._postings, self.queries
        tf = term_frequencies(doc)
        candidates: set[str] = set()
        for term in tf:
            candidates |= postings.get(term, frozenset())
        matched = [queries[qid] for qid in candidates if queries[qid].matches(tf)]
        work = BASE_WORK + CANDIDATE_WORK * len(candidates)
        if scoring:
            work += SCORING_WORK * len(matched)
            results: list[Match] = [(q.id, score(q, tf)) for q in matched]
            results.sort(key=lambda m: (-m[1], m[0]))
        else:
            results = sorted((q.id, None) for q in matched)
        return results, work

    def percolate(self, doc: Document, scoring: bool = True) -> list[Match]:
        return self.percolate_with_cost(doc, scoring)[0]


def brute_force_percolate(queries: list[StoredQuery], doc: Document, scoring: bool = True) -> list[Match]:
    """Reference matcher: every query against the raw token list."""
    tokens = doc.tokens()
    out = []
    for q in queries:
        present = [t in tokens for t in q.terms]
        ok = all(present) if q.operator is Operator.AND else any(present)
        if ok:
            s = sum(tokens.count(t) for t in q.terms) / len(q.terms) if scoring else None
            out.append((q.id, s))
    if scoring:
        return sorted(out, key=lambda m: (-m[1], m[0]))
    return sorted(out)


class SyntheticCorpus:
    """Seeded Zipf-distributed vocabulary for queries and documents."""

    def __init__(self, seed: int = 0, vocab_size: int = 2000, exponent: float = 1.1) -> None:
        self.rng = random.Random(f"corpus:{seed}")
        self.vocab = [f"w{i}" for i in range(vocab_size)]
        weights = [1.0 / (i + 1) ** exponent for i in range(vocab_size)]
        total = sum(weights)
        self._cdf = list(itertools.accumulate(w / total for w in weights))

    def word(self, skip_top: int = 0) -> str:
        """Draw a word; ``skip_top`` rejects the most frequent ranks."""
        while True:
            i = min(bisect.bisect_left(self._cdf, self.rng.random()), len(self.vocab) - 1)
            if i >= skip_top:
                return self.vocab[i]

    def queries(self, n: int, max_terms: int = 3, skip_top: int = 100) -> list[StoredQuery]:
        """Short queries that avoid the stopword-like head of the vocabulary."""
        out = []
        for i in range(n):
            k = self.rng.randint(1, max_terms)
            terms = tuple(dict.fromkeys(self.word(skip_top) for _ in range(k)))
            op = Operator.AND if self.rng.random() < 0.7 else Operator.OR
            out.append(StoredQuery(f"q{i:05d}", terms, op))
        return out

    def documents(self, n: int, min_len: int = 8, max_len: int = 40) -> list[Document]:
        docs = []
        for i in range(n):
            body = " ".join(self.word() for _ in range(self.rng.randint(min_len, max_len)))
            docs.append(Document(f"d{i:05d}", {"body": body}))
        return docs
