"""Three-phase illicit-site classification.

Phase 1 takes labels straight from the annotated ground truth. Phase 2
labels sites whose pages are cosine-similar (>= threshold) to a ground
truth page. Phase 3 projects TF-IDF vectors onto a per-category keyword
feature set and applies the same cosine rule to whatever is still
unlabeled. Later phases never relabel earlier ones.
"""

from __future__ import annotations

import enum
import json
import logging
import math
import re
from dataclasses import dataclass, field
from importlib import resources

from .corpus import Corpus, OnionDomain, PageRecord, SiteProfile
from .pagetext import page_text

log = logging.getLogger("onionforge.classify")

TOKEN_RE = re.compile(r"[a-z0-9]+")
MIN_TOKEN_LEN = 3
TOP_KEYWORDS = 20
DEFAULT_THRESHOLD = 0.5


class ClassifyConfigError(Exception):
    pass


class Category(enum.Enum):
    """The twelve illicit categories, in ground-truth table order, plus Other."""

    INVESTMENT_SCAMS = 1
    PRIVATE_KEY = 2
    CLONE_CARD = 3
    COUNTERFEIT_BILLS = 4
    CITIZENSHIP = 5
    DRUGS = 6
    HACKER = 7
    HITMEN = 8
    SEXUAL_ABUSE = 9
    MEMBERSHIPS = 10
    WEAPONS = 11
    SHOP = 12
    OTHER = 99

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def parse(cls, text: str) -> "Category":
        key = re.sub(r"[\s_-]+", "", text).lower()
        try:
            return _ALIASES[key]
        except KeyError:
            raise ClassifyConfigError("unknown category %r" % text) from None


_LABELS = {
    Category.INVESTMENT_SCAMS: "InvestmentScams",
    Category.PRIVATE_KEY: "PrivateKey",
    Category.CLONE_CARD: "CloneCard",
    Category.COUNTERFEIT_BILLS: "CounterfeitBills",
    Category.CITIZENSHIP: "Citizenship",
    Category.DRUGS: "Drugs",
    Category.HACKER: "Hacker",
    Category.HITMEN: "Hitmen",
    Category.SEXUAL_ABUSE: "SexualAbuse",
    Category.MEMBERSHIPS: "Memberships",
    Category.WEAPONS: "Weapons",
    Category.SHOP: "Shop",
    Category.OTHER: "Other",
}

_ALIASES = {re.sub(r"[\s_-]+", "", v).lower(): k for k, v in _LABELS.items()}
_ALIASES.update({
    "investmentscam": Category.INVESTMENT_SCAMS,
    "privatekeys": Category.PRIVATE_KEY,
    "clonedcard": Category.CLONE_CARD,
    "clonedcards": Category.CLONE_CARD,
    "hacking": Category.HACKER,
    "sexualabuses": Category.SEXUAL_ABUSE,
    "shops": Category.SHOP,
})

CATEGORIES = tuple(c for c in Category if c is not Category.OTHER)

TokenSequence = list            # ordered lowercase tokens
TermVector = dict               # word -> count or weight, no zero entries


def load_stopwords() -> set[str]:
    text = resources.files("onionforge.data").joinpath("stopwords.txt").read_text()
    return {line.strip() for line in text.splitlines()
            if line.strip() and not line.startswith("#")}


def load_stopwords_from(path) -> set[str]:
    with open(path) as fh:
        return {line.strip() for line in fh if line.strip() and not line.startswith("#")}


def tokenize(text: str, stopwords: set[str]) -> list[str]:
    """Lowercase word tokens, minus punctuation, numerics, stopwords, short words."""
    out = []
    for token in TOKEN_RE.findall(text.lower()):
        if not token.isalpha():
            continue
        if len(token) < MIN_TOKEN_LEN or token in stopwords:
            continue
        out.append(token)
    return out


def preprocess(page: PageRecord, stopwords: set[str]) -> list[str]:
    """Tag-strip a page and reduce it to a filtered token sequence."""
    return tokenize(page_text(page.html), stopwords)


def probably_english(text: str) -> bool:
    """Cheap language gate: pages are classified as-is either way."""
    if not text:
        return True
    non_ascii = sum(1 for c in text if ord(c) > 127)
    return non_ascii / len(text) < 0.3


def term_vector(tokens: list[str]) -> TermVector:
    vec: TermVector = {}
    for t in tokens:
        vec[t] = vec.get(t, 0) + 1
    return vec


def cosine(v1: TermVector, v2: TermVector) -> float:
    """Cosine similarity of two non-negative sparse vectors; 0 if either is zero."""
    if len(v2) < len(v1):
        v1, v2 = v2, v1
    dot = sum(w * v2[t] for t, w in v1.items() if t in v2)
    if not dot:
        return 0.0
    n1 = math.sqrt(sum(w * w for w in v1.values()))
    n2 = math.sqrt(sum(w * w for w in v2.values()))
    if n1 == 0.0 or n2 == 0.0:
        return 0.0
    return dot / (n1 * n2)


def tfidf_vectors(count_vectors: list[TermVector]) -> tuple[list[TermVector], dict[str, float]]:
    """Weight raw counts by ln(N/df) + 1 over the given document corpus.

    Returns the weighted vectors plus the idf table used.
    """
    n = len(count_vectors)
    df: dict[str, int] = {}
    for vec in count_vectors:
        for term in vec:
            df[term] = df.get(term, 0) + 1
    idf = {term: math.log(n / d) + 1.0 for term, d in df.items()}
    return [{term: count * idf[term] for term, count in vec.items()}
            for vec in count_vectors], idf


@dataclass
class GroundTruth:
    """(page, category) annotations with per-site aggregation."""

    rows: list[tuple[PageRecord, Category]] = field(default_factory=list)

    def pages_by_category(self) -> dict[Category, list[PageRecord]]:
        out: dict[Category, list[PageRecord]] = {}
        for page, cat in self.rows:
            out.setdefault(cat, []).append(page)
        return out

    def site_page_labels(self) -> dict[OnionDomain, list[Category]]:
        out: dict[OnionDomain, list[Category]] = {}
        for page, cat in self.rows:
            out.setdefault(page.domain, []).append(cat)
        return out

    def domains(self) -> set[OnionDomain]:
        return {page.domain for page, _ in self.rows}


def load_ground_truth(path, corpus: Corpus) -> GroundTruth:
    """Read {domain, path, category} JSONL, resolving every row against the corpus."""
    by_key = {(p.domain.name, p.path): p for p in corpus.pages}
    gt = GroundTruth()
    missing = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            row = json.loads(line)
            cat = Category.parse(row["category"])
            page = by_key.get((row["domain"], row["path"]))
            if page is None:
                missing.append("%s %s (line %d)" % (row["domain"], row["path"], lineno))
                continue
            gt.rows.append((page, cat))
    if missing:
        raise ClassifyConfigError("ground truth references pages missing from corpus: "
                                  + "; ".join(missing))
    return gt


def aggregate_site_label(page_labels: list[Category]) -> Category:
    """Zero distinct non-Other labels -> Other; one -> itself; several -> Shop."""
    distinct = {c for c in page_labels if c is not Category.OTHER}
    if not distinct:
        return Category.OTHER
    if len(distinct) == 1:
        return distinct.pop()
    return Category.SHOP


def _best_category(scores: dict[Category, float], threshold: float) -> tuple[Category, float]:
    """Highest score wins if it clears the threshold; ties fall to table order."""
    best, best_score = Category.OTHER, 0.0
    for cat in CATEGORIES:
        score = scores.get(cat, 0.0)
        if score > best_score:
            best, best_score = cat, score
    if best_score >= threshold and best is not Category.OTHER:
        return best, best_score
    return Category.OTHER, best_score


def classify_by_similarity(site: SiteProfile, gt: GroundTruth,
                           threshold: float = DEFAULT_THRESHOLD,
                           stopwords: set[str] | None = None) -> Category:
    """Phase-2 rule: max page-pair cosine against each category's ground truth."""
    stopwords = load_stopwords() if stopwords is None else stopwords
    site_vectors = [term_vector(preprocess(p, stopwords)) for p in site.pages]
    gt_vectors = {cat: [term_vector(preprocess(p, stopwords)) for p in pages]
                  for cat, pages in gt.pages_by_category().items() if cat is not Category.OTHER}
    label, _ = _similarity_label(site_vectors, gt_vectors, threshold)
    return label


def _similarity_label(site_vectors, gt_vectors, threshold):
    scores = {}
    for cat, vectors in gt_vectors.items():
        best = 0.0
        for sv in site_vectors:
            for gv in vectors:
                sim = cosine(sv, gv)
                if sim > best:
                    best = sim
        scores[cat] = best
    return _best_category(scores, threshold)


@dataclass
class FeatureSet:
    """Merged top-TF-IDF keywords with the vectors needed for projection."""

    keywords: list[str]
    category_vectors: dict[Category, TermVector]   # full TF-IDF vectors
    idf: dict[str, float]
    top_keywords: dict[Category, list[str]]

    def projected(self, cat: Category) -> TermVector:
        keep = set(self.keywords)
        return {t: w for t, w in self.category_vectors[cat].items() if t in keep}


def build_feature_set(gt: GroundTruth, stopwords: set[str] | None = None) -> FeatureSet:
    """Per-category TF-IDF over the 12 concatenated category documents."""
    stopwords = load_stopwords() if stopwords is None else stopwords
    docs: dict[Category, list[str]] = {cat: [] for cat in CATEGORIES}
    for page, cat in gt.rows:
        if cat is Category.OTHER:
            continue
        docs[cat].extend(preprocess(page, stopwords))
    empty = [cat.label for cat in CATEGORIES if not docs[cat]]
    if empty:
        raise ClassifyConfigError("ground truth lacks content for: " + ", ".join(empty))

    counts = [term_vector(docs[cat]) for cat in CATEGORIES]
    weighted, idf = tfidf_vectors(counts)
    cat_vectors = dict(zip(CATEGORIES, weighted))

    top: dict[Category, list[str]] = {}
    merged: list[str] = []
    seen = set()
    for cat in CATEGORIES:
        ranked = sorted(cat_vectors[cat].items(), key=lambda kv: (-kv[1], kv[0]))
        top[cat] = [t for t, _ in ranked[:TOP_KEYWORDS]]
        for t in top[cat]:
            if t not in seen:
                seen.add(t)
                merged.append(t)
    return FeatureSet(keywords=merged, category_vectors=cat_vectors, idf=idf,
                      top_keywords=top)


def tfidf_classify(site: SiteProfile, fs: FeatureSet,
                   threshold: float = DEFAULT_THRESHOLD,
                   stopwords: set[str] | None = None) -> Category:
    """Phase-3 rule: cosine in feature-set space, same threshold and ties."""
    stopwords = load_stopwords() if stopwords is None else stopwords
    tokens = []
    for page in site.pages:
        tokens.extend(preprocess(page, stopwords))
    return _tfidf_label(term_vector(tokens), fs, threshold)[0]


def _tfidf_label(site_counts: TermVector, fs: FeatureSet, threshold):
    keep = set(fs.keywords)
    site_vec = {t: c * fs.idf[t] for t, c in site_counts.items() if t in keep}
    if not site_vec:
        return Category.OTHER, 0.0
    scores = {cat: cosine(site_vec, fs.projected(cat)) for cat in CATEGORIES}
    return _best_category(scores, threshold)


@dataclass
class LabelResult:
    domain: OnionDomain
    category: Category
    phase: str          # ground-truth | cosine | tfidf | none
    score: float | None = None


def classify_corpus(corpus: Corpus, gt: GroundTruth,
                    threshold: float = DEFAULT_THRESHOLD,
                    stopwords: set[str] | None = None) -> dict[OnionDomain, LabelResult]:
    """Run all three phases over a corpus. Deterministic for fixed inputs."""
    stopwords = load_stopwords() if stopwords is None else stopwords
    results: dict[OnionDomain, LabelResult] = {}

    site_labels = gt.site_page_labels()
    for domain in sorted(site_labels):
        label = aggregate_site_label(site_labels[domain])
        results[domain] = LabelResult(domain, label, "ground-truth")

    token_cache: dict[int, list[str]] = {}

    def vectors_for(pages):
        out = []
        for p in pages:
            key = id(p)
            if key not in token_cache:
                text = page_text(p.html)
                if not probably_english(text):
                    log.warning("page %s%s looks non-English; classifying as-is",
                                p.domain, p.path)
                token_cache[key] = tokenize(text, stopwords)
            out.append(term_vector(token_cache[key]))
        return out

    gt_vectors = {cat: vectors_for(pages)
                  for cat, pages in gt.pages_by_category().items()
                  if cat is not Category.OTHER}

    unlabeled = [d for d in corpus.domains() if d not in results]
    for domain in unlabeled:
        site_vectors = vectors_for(corpus.pages_for(domain))
        label, score = _similarity_label(site_vectors, gt_vectors, threshold)
        if label is not Category.OTHER:
            results[domain] = LabelResult(domain, label, "cosine", score)

    fs = build_feature_set(gt, stopwords)
    for domain in unlabeled:
        if domain in results:
            continue  # cosine labels are final
        counts: TermVector = {}
        for vec in vectors_for(corpus.pages_for(domain)):
            for t, c in vec.items():
                counts[t] = counts.get(t, 0) + c
        label, score = _tfidf_label(counts, fs, threshold)
        if label is not Category.OTHER:
            results[domain] = LabelResult(domain, label, "tfidf", score)
        else:
            results[domain] = LabelResult(domain, Category.OTHER, "none", score)

    return results


def write_labels_jsonl(results: dict[OnionDomain, LabelResult], out_path):
    with open(out_path, "w") as fh:
        for domain in sorted(results):
            r = results[domain]
            row = {"v": 1, "domain": domain.name, "category": r.category.label,
                   "phase": r.phase}
            if r.score is not None:
                row["score"] = round(r.score, 12)
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_labels_jsonl(path) -> dict[str, Category]:
    out = {}
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            out[row["domain"]] = Category.parse(row["category"])
    return out
