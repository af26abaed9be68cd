"""Surface-web tracing of illicit addresses through a pluggable search
adapter, plus analyst-annotation import (abuse reports, identity facts)."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from urllib.parse import urlparse

log = logging.getLogger("onionforge.trace")

HIT_KINDS = ("Explorer", "AbuseReport", "IllicitSite", "Benign", "Unreviewed")
ANALYST_KINDS = ("AbuseReport", "IllicitSite", "Benign")


class TraceError(Exception):
    pass


@dataclass(frozen=True)
class SurfaceHit:
    address: str
    url: str
    source: str = "search"
    kind: str = "Unreviewed"

    def __post_init__(self):
        if self.kind not in HIT_KINDS:
            raise TraceError("unknown hit kind %r" % self.kind)
        parsed = urlparse(self.url)
        if parsed.scheme not in ("http", "https") or not parsed.netloc:
            raise TraceError("not a usable URL: %r" % self.url)


@dataclass(frozen=True)
class IdentityFact:
    url: str
    ip: str | None = None
    registrant: str | None = None

    def __post_init__(self):
        if not self.ip and not self.registrant:
            raise TraceError("identity fact for %s carries neither ip nor registrant"
                             % self.url)


def load_explorer_domains() -> set[str]:
    text = resources.files("onionforge.data").joinpath("explorer_domains.txt").read_text()
    return {line.strip().lower() for line in text.splitlines()
            if line.strip() and not line.startswith("#")}


def load_explorer_domains_from(path) -> set[str]:
    with open(path) as fh:
        return {line.strip().lower() for line in fh
                if line.strip() and not line.startswith("#")}


class SearchAdapter:
    """Returns candidate URLs mentioning an address."""

    source = "search"

    def results(self, address: str) -> list[str]:
        raise NotImplementedError


class FixtureSearch(SearchAdapter):
    """Replay mode: <fixtures>/<address>.json holds an array of URLs."""

    source = "fixtures"

    def __init__(self, fixtures_dir):
        self.fixtures_dir = Path(fixtures_dir)

    def results(self, address: str) -> list[str]:
        path = self.fixtures_dir / (address + ".json")
        if not path.is_file():
            return []
        rows = json.loads(path.read_text())
        return [row if isinstance(row, str) else row["url"] for row in rows]


class HttpSearch(SearchAdapter):
    """GET {base_url}?q={address} returning {"results": [url, ...]}."""

    source = "http"

    def __init__(self, base_url: str, session=None, rate_limit: float | None = None,
                 timeout: float = 30.0):
        if session is None:
            import requests
            session = requests.Session()
        self.base_url = base_url
        self.session = session
        self.timeout = timeout
        self._min_interval = 1.0 / rate_limit if rate_limit else 0.0
        self._last_start = None

    def results(self, address: str) -> list[str]:
        if self._min_interval:
            if self._last_start is not None:
                wait = self._last_start + self._min_interval - time.monotonic()
                if wait > 0:
                    time.sleep(wait)
            self._last_start = time.monotonic()
        resp = self.session.get(self.base_url, params={"q": address},
                                timeout=self.timeout)
        resp.raise_for_status()
        return list(resp.json().get("results", []))


def _host_matches(url: str, domains: set[str]) -> bool:
    host = urlparse(url).netloc.lower().split(":")[0]
    return any(host == d or host.endswith("." + d) for d in domains)


def search_address(address: str, provider: SearchAdapter,
                   explorer_domains: set[str] | None = None) -> list[SurfaceHit]:
    """Deduplicated hits for one address, explorer URLs auto-marked."""
    domains = explorer_domains if explorer_domains is not None else load_explorer_domains()
    hits = []
    seen = set()
    for url in provider.results(address):
        if url in seen:
            continue
        seen.add(url)
        hits.append(SurfaceHit(address=address, url=url, source=provider.source))
    return filter_explorer_urls(hits, domains)


def search_all(addresses, provider: SearchAdapter,
               explorer_domains: set[str] | None = None):
    """Search every address; failures are recorded, not fatal."""
    domains = explorer_domains if explorer_domains is not None else load_explorer_domains()
    hits: list[SurfaceHit] = []
    failures: dict[str, str] = {}
    for address in sorted(set(addresses)):
        try:
            hits.extend(search_address(address, provider, domains))
        except Exception as exc:
            failures[address] = str(exc)
            log.warning("search failed for %s: %s", address, exc)
    return hits, failures


def filter_explorer_urls(hits, explorer_domains: set[str]) -> list[SurfaceHit]:
    """Mark unreviewed hits on explorer hosts; analyst kinds stay untouched."""
    out = []
    for hit in hits:
        if hit.kind == "Unreviewed" and _host_matches(hit.url, explorer_domains):
            out.append(replace(hit, kind="Explorer"))
        else:
            out.append(hit)
    return out


def import_annotations(rows_or_path, hits):
    """Apply analyst rows {url, kind?, ip?, registrant?, note?} to hits.

    Rows naming a URL absent from the hit list are skipped with a warning.
    Returns (updated hits, identity facts, skipped row count).
    """
    if isinstance(rows_or_path, (str, Path)):
        rows = []
        with open(rows_or_path) as fh:
            for line in fh:
                if line.strip():
                    rows.append(json.loads(line))
    else:
        rows = list(rows_or_path)

    known_urls = {h.url for h in hits}
    updated = list(hits)
    facts: list[IdentityFact] = []
    skipped = 0
    for row in rows:
        url = row.get("url")
        if url not in known_urls:
            log.warning("annotation for unknown url skipped: %r", url)
            skipped += 1
            continue
        kind = row.get("kind")
        if kind is not None and kind not in ANALYST_KINDS:
            log.warning("annotation with unknown kind %r skipped", kind)
            skipped += 1
            continue
        if kind is not None:
            updated = [replace(h, kind=kind) if h.url == url else h for h in updated]
        if row.get("ip") or row.get("registrant"):
            facts.append(IdentityFact(url=url, ip=row.get("ip"),
                                      registrant=row.get("registrant")))
    return updated, facts, skipped


def surface_links(hits, facts) -> list[dict]:
    """Join identity facts with the addresses seen at each URL.

    Produces the surface-facts rows consumed by identity clustering:
    {url, ip, registrant, addresses}.
    """
    addrs_by_url: dict[str, set[str]] = {}
    for hit in hits:
        addrs_by_url.setdefault(hit.url, set()).add(hit.address)
    merged: dict[str, dict] = {}
    for fact in facts:
        row = merged.setdefault(fact.url, {"url": fact.url, "ip": None,
                                           "registrant": None, "addresses": ()})
        if fact.ip:
            row["ip"] = fact.ip
        if fact.registrant:
            row["registrant"] = fact.registrant
    for url, row in merged.items():
        row["addresses"] = tuple(sorted(addrs_by_url.get(url, ())))
    return [merged[url] for url in sorted(merged)]


# --- hits.jsonl inter-stage format ---

def write_hits_jsonl(hits, failures, out_path):
    with open(out_path, "w") as fh:
        for hit in sorted(hits, key=lambda h: (h.address, h.url)):
            fh.write(json.dumps({"v": 1, "address": hit.address, "url": hit.url,
                                 "source": hit.source, "kind": hit.kind},
                                sort_keys=True) + "\n")
        for address in sorted(failures):
            fh.write(json.dumps({"v": 1, "address": address, "error": failures[address]},
                                sort_keys=True) + "\n")


def read_hits_jsonl(path) -> list[SurfaceHit]:
    hits = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            if "url" not in row:
                continue  # failure record
            hits.append(SurfaceHit(address=row["address"], url=row["url"],
                                   source=row.get("source", "search"),
                                   kind=row.get("kind", "Unreviewed")))
    return hits


def write_surface_jsonl(links, out_path):
    with open(out_path, "w") as fh:
        for row in links:
            fh.write(json.dumps({"v": 1, "url": row["url"], "ip": row["ip"],
                                 "registrant": row["registrant"],
                                 "addresses": list(row["addresses"])},
                                sort_keys=True) + "\n")


def read_surface_jsonl(path) -> list[dict]:
    out = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            out.append({"url": row["url"], "ip": row.get("ip"),
                        "registrant": row.get("registrant"),
                        "addresses": tuple(row.get("addresses", ()))})
    return out
