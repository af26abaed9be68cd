"""Entity resolution: five concatenated merge phases over sites, addresses,
emails, and surface-web identity facts.

Every phase only merges, so clustered-site counts can never shrink. The
partition is a union-find whose extracted components are keyed by their
lexicographically smallest member, which makes results independent of the
order edges are processed in.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from urllib.parse import urlparse

from . import chain
from .chain import AddressLedger, IllicitAddressSet, Transaction, is_internal
from .classify import Category

log = logging.getLogger("onionforge.cluster")

DEFAULT_PUBLIC_THRESHOLD = 50
DEFAULT_VANITY_PREFIX = 7  # length of "deepmar"

MIXING_MIN_PARTICIPANTS = 3

# node id prefixes
SITE, BTC, EMAIL, IP, REG, URL = "site", "btc", "email", "ip", "reg", "url"


def node_id(kind: str, value: str) -> str:
    return "%s:%s" % (kind, value)


def node_kind(nid: str) -> str:
    return nid.split(":", 1)[0]


def node_value(nid: str) -> str:
    return nid.split(":", 1)[1]


class UnionFind:
    """Disjoint sets over string ids with path compression."""

    def __init__(self, members=()):
        self.parent: dict[str, str] = {}
        for m in members:
            self.add(m)

    def add(self, item: str):
        self.parent.setdefault(item, item)

    def find(self, item: str) -> str:
        self.add(item)
        root = item
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[item] != root:
            self.parent[item], item = root, self.parent[item]
        return root

    def union(self, a: str, b: str):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # deterministic orientation: smaller id becomes the root
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra

    def components(self) -> dict[str, list[str]]:
        """Canonical representative (lexicographically smallest) -> sorted members."""
        groups: dict[str, list[str]] = {}
        for item in self.parent:
            groups.setdefault(self.find(item), []).append(item)
        return {min(members): sorted(members) for members in groups.values()}

    def partition(self) -> frozenset[frozenset[str]]:
        return frozenset(frozenset(m) for m in self.components().values())


EDGE_KINDS = ("site-hosts-addr", "site-lists-email", "common-input", "internal-tx",
              "url-resolves-ip", "url-registered-by", "addr-found-at-url")


@dataclass
class EntityGraph:
    nodes: dict[str, dict] = field(default_factory=dict)
    edges: list[tuple[str, str, str]] = field(default_factory=list)  # (kind, u, v)
    _edge_set: set[tuple[str, str, str]] = field(default_factory=set)

    def add_node(self, nid: str, **attrs):
        node = self.nodes.setdefault(nid, {"type": node_kind(nid)})
        node.update(attrs)
        return nid

    def add_edge(self, kind: str, u: str, v: str):
        if kind not in EDGE_KINDS:
            raise ValueError("unknown edge kind %r" % kind)
        if u == v:
            return
        self.add_node(u)
        self.add_node(v)
        key = (kind, u, v) if u <= v else (kind, v, u)
        if key not in self._edge_set:
            self._edge_set.add(key)
            self.edges.append(key)

    def edges_of_kind(self, kind: str) -> list[tuple[str, str, str]]:
        return sorted(e for e in self.edges if e[0] == kind)


def build_entity_graph(labels: dict[str, Category],
                       illicit: IllicitAddressSet,
                       site_emails: dict[str, set[str]] | None = None) -> EntityGraph:
    """Seed graph: labeled non-Other sites, their addresses and emails."""
    graph = EntityGraph()
    for domain in sorted(labels):
        if labels[domain] is Category.OTHER:
            continue
        graph.add_node(node_id(SITE, domain), category=labels[domain].label)
    for address in illicit.addresses():
        graph.add_node(node_id(BTC, address))
        for site in sorted(illicit.sites_of(address)):
            graph.add_edge("site-hosts-addr", node_id(SITE, site), node_id(BTC, address))
    for domain, emails in sorted((site_emails or {}).items()):
        if labels.get(domain, Category.OTHER) is Category.OTHER:
            continue
        for email in sorted(emails):
            graph.add_edge("site-lists-email", node_id(SITE, domain), node_id(EMAIL, email))
    return graph


def detect_mixing(tx: Transaction, min_participants: int = MIXING_MIN_PARTICIPANTS) -> bool:
    """JoinMarket-style CoinJoin signature: many distinct inputs feeding a
    block of equal-value outputs. Approximate by design; a false positive
    only suppresses a merge."""
    if len(tx.inputs) < min_participants:
        return False
    if len({i.address for i in tx.inputs}) < min_participants:
        return False
    counts: dict[int, int] = {}
    for out in tx.outputs:
        counts[out.value] = counts.get(out.value, 0) + 1
    return any(n >= min_participants for n in counts.values())


def phase_shared_site(graph: EntityGraph, partition: UnionFind | None = None) -> UnionFind:
    """Connected components over site-hosts-addr edges."""
    uf = partition if partition is not None else UnionFind()
    for nid, attrs in sorted(graph.nodes.items()):
        if attrs["type"] in (SITE, BTC):
            uf.add(nid)
    for _, u, v in graph.edges_of_kind("site-hosts-addr"):
        uf.union(u, v)
    return uf


def phase_common_input(partition: UnionFind, ledgers: dict[str, AddressLedger],
                       illicit=None, graph: EntityGraph | None = None) -> UnionFind:
    """Multi-input heuristic restricted to known illicit addresses.

    Mixing transactions contribute no edges; unknown input addresses are
    never pulled in.
    """
    members = set(illicit.addresses()) if illicit is not None else set(ledgers)
    for tx in chain.unique_transactions(ledgers):
        if detect_mixing(tx):
            continue
        ins = sorted({i.address for i in tx.inputs if i.address in members})
        for other in ins[1:]:
            partition.union(node_id(BTC, ins[0]), node_id(BTC, other))
            if graph is not None:
                graph.add_edge("common-input", node_id(BTC, ins[0]), node_id(BTC, other))
    return partition


def phase_internal_tx(partition: UnionFind, ledgers: dict[str, AddressLedger],
                      illicit=None, graph: EntityGraph | None = None) -> UnionFind:
    """Merge the illicit inputs and outputs of internal transactions."""
    members = set(illicit.addresses()) if illicit is not None else set(ledgers)
    for tx in chain.unique_transactions(ledgers):
        if detect_mixing(tx) or not is_internal(tx, members):
            continue
        ins = sorted({i.address for i in tx.inputs if i.address in members})
        outs = sorted({o.address for o in tx.outputs if o.address in members})
        for src in ins:
            for dst in outs:
                if src != dst:
                    partition.union(node_id(BTC, src), node_id(BTC, dst))
                    if graph is not None:
                        graph.add_edge("internal-tx", node_id(BTC, src), node_id(BTC, dst))
    return partition


def phase_email(partition: UnionFind, graph: EntityGraph) -> UnionFind:
    """Sites sharing an email merge through the email node."""
    for _, u, v in graph.edges_of_kind("site-lists-email"):
        partition.union(u, v)
    return partition


@dataclass(frozen=True)
class SurfaceLink:
    url: str
    ip: str | None = None
    registrant: str | None = None
    addresses: tuple[str, ...] = ()


def _url_host(url: str) -> str:
    return urlparse(url).netloc.lower()


def _norm_registrant(name: str) -> str:
    return name.strip().casefold()


def phase_identity(partition: UnionFind, surface_links,
                   public_threshold: int = DEFAULT_PUBLIC_THRESHOLD,
                   illicit=None, graph: EntityGraph | None = None,
                   excluded_out: list | None = None) -> UnionFind:
    """Merge addresses exposed on URLs sharing a non-public IP or registrant.

    IPs/registrants behind more than public_threshold distinct hosts are
    treated as shared infrastructure and excluded (appended to excluded_out
    for manual review); URLs with no remaining identity fact contribute
    nothing.
    """
    links = [link if isinstance(link, SurfaceLink) else SurfaceLink(**link)
             for link in surface_links]
    hosts_by_ip: dict[str, set[str]] = {}
    hosts_by_reg: dict[str, set[str]] = {}
    for link in links:
        host = _url_host(link.url)
        if link.ip:
            hosts_by_ip.setdefault(link.ip, set()).add(host)
        if link.registrant:
            hosts_by_reg.setdefault(_norm_registrant(link.registrant), set()).add(host)
    public_ips = {ip for ip, hosts in hosts_by_ip.items() if len(hosts) > public_threshold}
    public_regs = {r for r, hosts in hosts_by_reg.items() if len(hosts) > public_threshold}

    members = set(illicit.addresses()) if illicit is not None else None
    excluded = []
    for link in sorted(links, key=lambda l: l.url):
        facts = []
        if link.ip:
            if link.ip in public_ips:
                excluded.append(("ip", link.ip, link.url))
            else:
                facts.append(("url-resolves-ip", node_id(IP, link.ip)))
        if link.registrant:
            norm = _norm_registrant(link.registrant)
            if norm in public_regs:
                excluded.append(("registrant", link.registrant, link.url))
            else:
                facts.append(("url-registered-by", node_id(REG, norm)))
        if not facts:
            continue
        url_node = node_id(URL, link.url)
        for kind, fact_node in facts:
            partition.union(url_node, fact_node)
            if graph is not None:
                graph.add_edge(kind, url_node, fact_node)
        for address in sorted(set(link.addresses)):
            if members is not None and address not in members:
                continue
            partition.union(url_node, node_id(BTC, address))
            if graph is not None:
                graph.add_edge("addr-found-at-url", node_id(BTC, address), url_node)
    if excluded:
        log.info("identity phase excluded %d public facts (flagged for review)",
                 len(excluded))
        if excluded_out is not None:
            excluded_out.extend(excluded)
    return partition


def vanity_groups(domains, min_prefix: int = DEFAULT_VANITY_PREFIX) -> list[tuple[str, list[str]]]:
    """Report-only: onion names sharing a leading prefix of >= min_prefix chars."""
    buckets: dict[str, list[str]] = {}
    for domain in sorted({str(d) for d in domains}):
        label = domain.split(".")[0]
        if len(label) >= min_prefix:
            buckets.setdefault(label[:min_prefix], []).append(domain)
    groups = []
    for names in buckets.values():
        if len(names) < 2:
            continue
        labels = [n.split(".")[0] for n in names]
        prefix = labels[0]
        for other in labels[1:]:
            while not other.startswith(prefix):
                prefix = prefix[:-1]
        groups.append((prefix, names))
    return sorted(groups)


# --- campaign extraction and the per-phase trace ---

@dataclass
class Campaign:
    id: str
    sites: list[str]
    btc_addresses: list[str]
    emails: list[str]
    ips: list[str]
    urls: list[str]
    categories: list[str]
    received: int

    def to_dict(self) -> dict:
        return {"v": 1, "id": self.id, "sites": self.sites,
                "btc_addresses": self.btc_addresses, "emails": self.emails,
                "ips": self.ips, "urls": self.urls, "categories": self.categories,
                "received": self.received}


@dataclass
class PhaseSnapshot:
    phase: str
    clusters: int
    sites: int
    btc: int
    emails: int
    ips: int

    def to_dict(self) -> dict:
        return {"phase": self.phase, "clusters": self.clusters, "onions": self.sites,
                "btc_addresses": self.btc, "email_addresses": self.emails,
                "ips": self.ips}


def _component_counts(members) -> dict[str, int]:
    counts = {SITE: 0, BTC: 0, EMAIL: 0, IP: 0, URL: 0, REG: 0}
    for nid in members:
        kind = node_kind(nid)
        if kind in counts:
            counts[kind] += 1
    return counts


def _is_cluster(counts: dict[str, int]) -> bool:
    # a grouping worth the name: sites sharing an address, or one site
    # commanding several addresses
    return counts[SITE] >= 2 or counts[BTC] >= 2


def snapshot(partition: UnionFind, phase: str) -> PhaseSnapshot:
    clusters = sites = btc = emails = ips = 0
    for members in partition.components().values():
        counts = _component_counts(members)
        if not _is_cluster(counts):
            continue
        clusters += 1
        sites += counts[SITE]
        btc += counts[BTC]
        emails += counts[EMAIL]
        ips += counts[IP]
    return PhaseSnapshot(phase=phase, clusters=clusters, sites=sites, btc=btc,
                         emails=emails, ips=ips)


def campaign_stats(partition: UnionFind, ledgers: dict[str, AddressLedger],
                   labels: dict[str, Category],
                   illicit: IllicitAddressSet) -> tuple[list[Campaign], dict]:
    """Campaigns = clustered components holding at least one address.

    Returns the campaigns sorted by received (desc) plus exclusion counters
    (clusters dropped for having no blockchain address).
    """
    income = chain.estimate_income(illicit, ledgers)
    raw = []
    excluded_no_btc = 0
    for members in partition.components().values():
        counts = _component_counts(members)
        if not _is_cluster(counts):
            continue
        if counts[BTC] == 0:
            excluded_no_btc += 1
            continue
        sites = sorted(node_value(n) for n in members if node_kind(n) == SITE)
        addrs = sorted(node_value(n) for n in members if node_kind(n) == BTC)
        cats = sorted({labels[s].label for s in sites
                       if labels.get(s, Category.OTHER) is not Category.OTHER})
        raw.append(Campaign(
            id="",
            sites=sites,
            btc_addresses=addrs,
            emails=sorted(node_value(n) for n in members if node_kind(n) == EMAIL),
            ips=sorted(node_value(n) for n in members if node_kind(n) == IP),
            urls=sorted(node_value(n) for n in members if node_kind(n) == URL),
            categories=cats,
            received=sum(income.per_address.get(a, 0) for a in addrs),
        ))
    raw.sort(key=lambda c: (-c.received, -len(c.sites), c.sites[0] if c.sites else ""))
    for i, campaign in enumerate(raw, 1):
        campaign.id = "c%03d" % i
    stats = {"clusters_before_exclusion": len(raw) + excluded_no_btc,
             "excluded_no_btc_address": excluded_no_btc}
    return raw, stats


@dataclass
class ClusterResult:
    campaigns: list[Campaign]
    trace: list[PhaseSnapshot]
    partition: UnionFind
    graph: EntityGraph
    vanity: list[tuple[str, list[str]]]
    exclusions: dict


def run_clustering(labels: dict[str, Category], illicit: IllicitAddressSet,
                   ledgers: dict[str, AddressLedger],
                   site_emails: dict[str, set[str]] | None = None,
                   surface_links=(),
                   public_threshold: int = DEFAULT_PUBLIC_THRESHOLD,
                   vanity_prefix: int = DEFAULT_VANITY_PREFIX) -> ClusterResult:
    """All five phases in order, tracing counts after each."""
    graph = build_entity_graph(labels, illicit, site_emails)
    trace = []

    partition = phase_shared_site(graph)
    trace.append(snapshot(partition, "shared-site"))

    phase_common_input(partition, ledgers, illicit, graph)
    trace.append(snapshot(partition, "common-input"))

    phase_internal_tx(partition, ledgers, illicit, graph)
    trace.append(snapshot(partition, "internal-tx"))

    phase_email(partition, graph)
    trace.append(snapshot(partition, "email"))

    public_facts: list = []
    phase_identity(partition, surface_links, public_threshold, illicit, graph,
                   excluded_out=public_facts)
    trace.append(snapshot(partition, "identity"))

    campaigns, exclusions = campaign_stats(partition, ledgers, labels, illicit)
    if public_facts:
        exclusions["public_identity_facts"] = [
            {"kind": k, "value": v, "url": u} for k, v, u in public_facts]
    vanity = vanity_groups([s for s in labels
                            if labels[s] is not Category.OTHER], vanity_prefix)
    return ClusterResult(campaigns=campaigns, trace=trace, partition=partition,
                         graph=graph, vanity=vanity, exclusions=exclusions)


def write_campaigns_json(campaigns: list[Campaign], exclusions: dict, out_path):
    doc = {"v": 1, "campaigns": [c.to_dict() for c in campaigns]}
    doc.update(exclusions)
    with open(out_path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_trace_json(trace: list[PhaseSnapshot], out_path):
    with open(out_path, "w") as fh:
        json.dump({"v": 1, "phases": [s.to_dict() for s in trace]}, fh,
                  indent=2, sort_keys=True)
        fh.write("\n")
