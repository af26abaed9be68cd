"""Offline snapshot corpus: onion domains, pages, and frontier replay.

A snapshot tree looks like

    <root>/<onion-domain>/<percent-encoded-path-or-"index">.html
    <root>/manifest.jsonl        (optional: {domain, path, fetched_at})

The pipeline never touches the live Tor network; a FetchAdapter can be
slotted in where a live fetcher is wanted.
"""

from __future__ import annotations

import base64
import json
import logging
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import TYPE_CHECKING
from urllib.parse import quote, unquote

from .pagetext import link_targets

if TYPE_CHECKING:
    from .classify import Category

log = logging.getLogger("onionforge.corpus")

ONION_NAME_RE = re.compile(r"^([a-z2-7]{16}|[a-z2-7]{56})\.onion$")
# matches v2/v3 onion names inside arbitrary text, e.g. hrefs
ONION_LINK_RE = re.compile(r"(?<![a-z2-7])([a-z2-7]{16}|[a-z2-7]{56})\.onion(?![a-z0-9])",
                           re.IGNORECASE)


class CorpusError(Exception):
    pass


@dataclass(frozen=True, order=True)
class OnionDomain:
    """A syntactically valid .onion name, canonical lowercase."""

    name: str

    def __post_init__(self):
        canon = self.name.strip().lower()
        if not ONION_NAME_RE.match(canon):
            raise ValueError("not a v2/v3 onion name: %r" % self.name)
        object.__setattr__(self, "name", canon)

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class PageRecord:
    domain: OnionDomain
    path: str
    html: bytes
    fetched_at: datetime

    def __post_init__(self):
        if not self.html:
            raise ValueError("page html must be non-empty")


@dataclass
class Corpus:
    pages: list[PageRecord] = field(default_factory=list)
    index: dict[OnionDomain, list[PageRecord]] = field(default_factory=dict)
    skipped: list[str] = field(default_factory=list)  # ingest warnings

    def add(self, page: PageRecord, replace: bool = False):
        bucket = self.index.setdefault(page.domain, [])
        for i, existing in enumerate(bucket):
            if existing.path == page.path:
                if not replace:
                    raise CorpusError("duplicate page %s %s" % (page.domain, page.path))
                bucket[i] = page
                self.pages[self.pages.index(existing)] = page
                return
        bucket.append(page)
        self.pages.append(page)

    def domains(self) -> list[OnionDomain]:
        return sorted(self.index)

    def pages_for(self, domain: OnionDomain) -> list[PageRecord]:
        return list(self.index.get(domain, []))

    def __len__(self):
        return len(self.pages)


@dataclass
class SiteProfile:
    """Per-domain aggregate filled in as pipeline stages run."""

    domain: OnionDomain
    pages: list[PageRecord] = field(default_factory=list)
    category: Category | None = None
    btc_addresses: list[str] = field(default_factory=list)
    emails: list[str] = field(default_factory=list)


class Frontier:
    """Ordered BFS queue of onion domains with a visited set."""

    def __init__(self):
        self._queue: list[OnionDomain] = []
        self._queued: set[OnionDomain] = set()
        self.visited: set[OnionDomain] = set()

    def push(self, domain: OnionDomain):
        if domain not in self._queued and domain not in self.visited:
            self._queue.append(domain)
            self._queued.add(domain)

    def pop(self) -> OnionDomain:
        domain = self._queue.pop(0)
        self._queued.discard(domain)
        self.visited.add(domain)
        return domain

    def __bool__(self):
        return bool(self._queue)


class FetchAdapter:
    """Interface for page retrieval; the offline pipeline uses CorpusFetch."""

    def get(self, domain: OnionDomain, path: str) -> bytes:
        raise NotImplementedError


class CorpusFetch(FetchAdapter):
    def __init__(self, corpus: Corpus):
        self.corpus = corpus

    def get(self, domain: OnionDomain, path: str) -> bytes:
        for page in self.corpus.pages_for(domain):
            if page.path == path:
                return page.html
        raise KeyError((domain, path))


def _path_from_filename(name: str) -> str:
    stem = name[:-len(".html")]
    if stem == "index":
        return "/"
    # strict decoding so undecodable names are reported instead of mangled
    return unquote(stem, errors="strict")


def _filename_from_path(path: str) -> str:
    if path == "/":
        return "index.html"
    return quote(path, safe="") + ".html"


def _parse_rfc3339(value: str) -> datetime:
    ts = datetime.fromisoformat(value.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def ingest_snapshot(root) -> Corpus:
    """Load a snapshot tree into a Corpus.

    Malformed domain directories are skipped with a warning; so are files
    whose names cannot be percent-decoded. Duplicate (domain, path) entries
    are last-write-wins.
    """
    root = Path(root)
    if not root.is_dir():
        raise CorpusError("snapshot root not readable: %s" % root)

    manifest: dict[tuple[str, str], datetime] = {}
    manifest_path = root / "manifest.jsonl"
    if manifest_path.is_file():
        for lineno, line in enumerate(manifest_path.read_text().splitlines(), 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                manifest[(row["domain"], row["path"])] = _parse_rfc3339(row["fetched_at"])
            except (ValueError, KeyError) as exc:
                log.warning("manifest line %d unusable: %s", lineno, exc)

    corpus = Corpus()
    for entry in sorted(root.iterdir()):
        if not entry.is_dir():
            continue
        try:
            domain = OnionDomain(entry.name)
        except ValueError:
            corpus.skipped.append(entry.name)
            log.warning("skipping non-onion directory %r", entry.name)
            continue
        for page_file in sorted(entry.iterdir()):
            if not page_file.name.endswith(".html"):
                corpus.skipped.append("%s/%s" % (entry.name, page_file.name))
                log.warning("skipping non-page file %r", page_file.name)
                continue
            try:
                path = _path_from_filename(page_file.name)
            except UnicodeDecodeError:
                corpus.skipped.append("%s/%s" % (entry.name, page_file.name))
                log.warning("skipping undecodable file name %r", page_file.name)
                continue
            html = page_file.read_bytes()
            if not html:
                corpus.skipped.append("%s/%s" % (entry.name, page_file.name))
                log.warning("skipping empty page %r", page_file.name)
                continue
            fetched = manifest.get((domain.name, path))
            if fetched is None:
                fetched = datetime.fromtimestamp(page_file.stat().st_mtime, tz=timezone.utc)
            page = PageRecord(domain=domain, path=path, html=html, fetched_at=fetched)
            try:
                corpus.add(page)
            except CorpusError:
                log.warning("duplicate page %s %s: keeping later file", domain, path)
                corpus.add(page, replace=True)
    return corpus


def export_snapshot(corpus: Corpus, root):
    """Write a Corpus back out as a snapshot tree (inverse of ingest_snapshot)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    manifest_lines = []
    for page in sorted(corpus.pages, key=lambda p: (p.domain.name, p.path)):
        site_dir = root / page.domain.name
        site_dir.mkdir(exist_ok=True)
        (site_dir / _filename_from_path(page.path)).write_bytes(page.html)
        manifest_lines.append(json.dumps(
            {"domain": page.domain.name, "path": page.path,
             "fetched_at": page.fetched_at.isoformat().replace("+00:00", "Z")},
            sort_keys=True))
    (root / "manifest.jsonl").write_text("\n".join(manifest_lines) + "\n")


def extract_onion_links(page: PageRecord) -> set[OnionDomain]:
    """Syntactically valid onion domains in href/src attributes and visible text."""
    found = set()
    for target in link_targets(page.html):
        for match in ONION_LINK_RE.finditer(target):
            found.add(OnionDomain(match.group(0)))
    return found


def frontier_crawl(seeds: set[OnionDomain], corpus: Corpus) -> set[OnionDomain]:
    """Replay link discovery over the snapshot until no new domains appear.

    BFS in insertion order, ties broken lexicographically; domains without
    pages in the corpus are reachable but contribute no further links.
    """
    if not seeds:
        raise ValueError("seeds must be non-empty")
    frontier = Frontier()
    for seed in sorted(seeds):
        frontier.push(seed)
    reached = set(seeds)
    while frontier:
        domain = frontier.pop()
        linked = set()
        for page in corpus.pages_for(domain):
            linked |= extract_onion_links(page)
        for nxt in sorted(linked):
            reached.add(nxt)
            frontier.push(nxt)
    return reached


# --- corpus.jsonl inter-stage format ---

def write_corpus_jsonl(corpus: Corpus, out_path):
    with open(out_path, "w") as fh:
        for page in sorted(corpus.pages, key=lambda p: (p.domain.name, p.path)):
            fh.write(json.dumps({
                "v": 1,
                "domain": page.domain.name,
                "path": page.path,
                "fetched_at": page.fetched_at.isoformat().replace("+00:00", "Z"),
                "html_b64": base64.b64encode(page.html).decode("ascii"),
            }, sort_keys=True) + "\n")


def read_corpus_jsonl(path) -> Corpus:
    corpus = Corpus()
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            corpus.add(PageRecord(
                domain=OnionDomain(row["domain"]),
                path=row["path"],
                html=base64.b64decode(row["html_b64"]),
                fetched_at=_parse_rfc3339(row["fetched_at"]),
            ), replace=True)
    return corpus


def site_profiles(corpus: Corpus) -> dict[OnionDomain, SiteProfile]:
    return {d: SiteProfile(domain=d, pages=corpus.pages_for(d)) for d in corpus.domains()}
