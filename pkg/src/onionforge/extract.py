"""Candidate address extraction and validation.

Bitcoin candidates are 25-39 char alphanumeric runs validated with
Base58Check; Ethereum candidates are 40 hex chars (optional 0x) validated
with the EIP-55 mixed-case checksum; emails are kept only when the final
domain label is a known TLD. Bech32 (bc1...) addresses fall outside the
25-39 alphanumeric pattern and are not extracted.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources

from . import base58
from .keccak import keccak256
from .pagetext import page_text_and_attrs

# maximal alphanumeric runs only: a candidate embedded in a longer run is noise
_ALNUM_RUN_RE = re.compile(r"[0-9a-zA-Z]+")
_HEX_RE = re.compile(r"[0-9a-fA-F]{40}$")
_EMAIL_RE = re.compile(r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+")
_HOST_LABEL_RE = re.compile(r"^[A-Za-z0-9](?:[A-Za-z0-9-]{0,61}[A-Za-z0-9])?$")

BTC_MIN_LEN = 25
BTC_MAX_LEN = 39
BTC_VERSIONS = (0x00, 0x05)  # P2PKH, P2SH


@dataclass(frozen=True)
class BtcAddressCandidate:
    text: str
    source: tuple[str, str]  # (domain, path)


@dataclass(frozen=True)
class BtcAddress:
    text: str
    version: int


@dataclass(frozen=True)
class EthAddress:
    text: str


@dataclass(frozen=True)
class EmailAddress:
    local: str
    domain: str

    def __str__(self):
        return "%s@%s" % (self.local, self.domain)


@dataclass(frozen=True)
class Rejection:
    reason: str  # bad-alphabet | bad-checksum | bad-version | bad-length | bad-hex | bad-eip55


def load_tlds() -> set[str]:
    text = resources.files("onionforge.data").joinpath("tlds.txt").read_text()
    return {line.strip().lower() for line in text.splitlines()
            if line.strip() and not line.startswith("#")}


def load_tlds_from(path) -> set[str]:
    with open(path) as fh:
        return {line.strip().lower() for line in fh
                if line.strip() and not line.startswith("#")}


def _dedup(seq):
    seen = set()
    out = []
    for item in seq:
        if item not in seen:
            seen.add(item)
            out.append(item)
    return out


def find_btc_candidates(text: str, source=("", "")) -> list[BtcAddressCandidate]:
    """Maximal 25-39 char alphanumeric runs, document order, deduplicated."""
    hits = [m.group(0) for m in _ALNUM_RUN_RE.finditer(text)
            if BTC_MIN_LEN <= len(m.group(0)) <= BTC_MAX_LEN]
    return [BtcAddressCandidate(text=t, source=source) for t in _dedup(hits)]


def find_eth_candidates(text: str) -> list[str]:
    """Maximal runs that are exactly 40 hex chars, or 0x + 40 hex chars."""
    hits = []
    for m in _ALNUM_RUN_RE.finditer(text):
        run = m.group(0)
        if len(run) == 40 and _HEX_RE.match(run):
            hits.append(run)
        elif len(run) == 42 and run[:2] in ("0x", "0X") and _HEX_RE.match(run[2:]):
            hits.append(run)
    return _dedup(hits)


def validate_btc(candidate: BtcAddressCandidate | str) -> BtcAddress | Rejection:
    """Base58Check validation; accepts only version 0x00 / 0x05 payloads."""
    text = candidate.text if isinstance(candidate, BtcAddressCandidate) else candidate
    for c in text:
        if c not in base58.ALPHABET:
            return Rejection("bad-alphabet")
    raw = base58.b58decode(text)
    if len(raw) != 25:
        return Rejection("bad-length")
    if base58.checksum(raw[:-4]) != raw[-4:]:
        return Rejection("bad-checksum")
    version = raw[0]
    if version not in BTC_VERSIONS:
        return Rejection("bad-version")
    return BtcAddress(text=text, version=version)


def eip55_checksum(hex_body: str) -> str:
    """Canonical mixed-case form of a 40-char hex address body."""
    lower = hex_body.lower()
    digest = keccak256(lower.encode("ascii")).hex()
    out = []
    for i, c in enumerate(lower):
        if c.isalpha() and int(digest[i], 16) >= 8:
            out.append(c.upper())
        else:
            out.append(c)
    return "".join(out)


def validate_eth(candidate: str) -> EthAddress | Rejection:
    """Hex + EIP-55 validation. Single-case bodies carry no checksum."""
    body = candidate[2:] if candidate[:2] in ("0x", "0X") else candidate
    if len(body) != 40:
        return Rejection("bad-length")
    if not _HEX_RE.match(body):
        return Rejection("bad-hex")
    if body == body.lower() or body == body.upper():
        return EthAddress(text=candidate)
    if body != eip55_checksum(body):
        return Rejection("bad-eip55")
    return EthAddress(text=candidate)


def _valid_hostname(host: str) -> bool:
    labels = host.split(".")
    if len(labels) < 2:
        return False
    return all(_HOST_LABEL_RE.match(label) for label in labels)


def find_emails(text: str, known_tlds: set[str]) -> list[EmailAddress]:
    """Syntactically valid addresses whose final domain label is a known TLD."""
    if not known_tlds:
        raise ValueError("known_tlds must be non-empty")
    out = []
    for m in _EMAIL_RE.finditer(text):
        local, _, host = m.group(0).rpartition("@")
        host = host.rstrip(".").lower()
        if not local or not _valid_hostname(host):
            continue
        if host.rsplit(".", 1)[-1] not in known_tlds:
            continue
        out.append(EmailAddress(local=local, domain=host))
    return _dedup(out)


def scan_page(html: bytes, source=("", ""), known_tlds: set[str] | None = None) -> dict:
    """One-page scan: validated/rejected BTC + ETH candidates and emails."""
    tlds = known_tlds if known_tlds is not None else load_tlds()
    text = page_text_and_attrs(html)
    results = {"btc": [], "eth": [], "email": []}
    for cand in find_btc_candidates(text, source):
        results["btc"].append((cand.text, validate_btc(cand)))
    for cand in find_eth_candidates(text):
        results["eth"].append((cand, validate_eth(cand)))
    for email in find_emails(text, tlds):
        results["email"].append(email)
    return results
