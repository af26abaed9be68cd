import itertools
import json
import random
from datetime import datetime, timedelta, timezone

import pytest

from onionforge.chain import (
    AddressAnnotation, AddressLedger, ChainError, FetchError, FixtureExplorer,
    HttpExplorer, IllicitAddressSet, Transaction, TxIO, active_period,
    dormant_addresses, estimate_income, fetch_all, fetch_transactions,
    filter_illicit_addresses, is_internal, load_annotations, multi_category,
    parse_transaction, transaction_to_dict, unique_transactions,
)
from onionforge.classify import Category

T0 = datetime(2020, 1, 1, tzinfo=timezone.utc)


def txid(n):
    return "%064x" % n


def mktx(n, ins, outs, when=None, coinbase=False):
    return Transaction(
        txid=txid(n), timestamp=when or (T0 + timedelta(hours=n)),
        inputs=tuple(TxIO(a, v) for a, v in ins),
        outputs=tuple(TxIO(a, v) for a, v in outs),
        coinbase=coinbase)


def illicit_of(*entries):
    s = IllicitAddressSet()
    for addr, site, cat in entries:
        s.add(addr, site, cat)
    return s


class TestTransaction:
    def test_txid_must_be_hex64(self):
        with pytest.raises(ChainError):
            mktx_bad = Transaction(txid="zz", timestamp=T0,
                                   inputs=(TxIO("a", 1),), outputs=())

    def test_negative_value_rejected(self):
        with pytest.raises(ChainError):
            TxIO("a", -5)

    def test_coinbase_may_lack_inputs(self):
        tx = mktx(1, [], [("a", 50)], coinbase=True)
        assert tx.coinbase

    def test_non_coinbase_needs_inputs(self):
        with pytest.raises(ChainError):
            mktx(1, [], [("a", 50)])

    def test_serialization_roundtrip(self):
        tx = mktx(7, [("in1", 10), ("in2", 5)], [("out1", 14)])
        assert parse_transaction(transaction_to_dict(tx)) == tx

    def test_epoch_timestamps_accepted(self):
        tx = parse_transaction({"txid": txid(1), "time": 1577836800,
                                "inputs": [{"address": "a", "value": 1}],
                                "outputs": []})
        assert tx.timestamp == T0


class TestLedger:
    def test_fixture_sums(self, tmp_path):
        txs = [
            {"txid": txid(1), "timestamp": "2020-01-01T00:00:00Z",
             "inputs": [{"address": "ext1", "value": 300}],
             "outputs": [{"address": "addr", "value": 300}]},
            {"txid": txid(2), "timestamp": "2020-01-02T00:00:00Z",
             "inputs": [{"address": "ext2", "value": 450}],
             "outputs": [{"address": "addr", "value": 400},
                         {"address": "ext2", "value": 50}]},
            {"txid": txid(3), "timestamp": "2020-01-03T00:00:00Z",
             "inputs": [{"address": "addr", "value": 250}],
             "outputs": [{"address": "ext3", "value": 250}]},
        ]
        (tmp_path / "addr.json").write_text(json.dumps(txs))
        ledger = fetch_transactions("addr", FixtureExplorer(tmp_path))
        # hand sums: received 300 + 400, sent 250
        assert ledger.received == 700
        assert ledger.sent == 250
        assert ledger.balance == 450
        assert len(ledger.transactions) == 3

    def test_unknown_address_empty(self, tmp_path):
        ledger = fetch_transactions("missing", FixtureExplorer(tmp_path))
        assert ledger.transactions == []
        assert ledger.first_seen is None and ledger.last_seen is None

    def test_fetch_idempotent(self, tmp_path):
        (tmp_path / "a.json").write_text(json.dumps([transaction_to_dict(
            mktx(1, [("x", 5)], [("a", 5)]))]))
        l1 = fetch_transactions("a", FixtureExplorer(tmp_path))
        l2 = fetch_transactions("a", FixtureExplorer(tmp_path))
        assert l1.transactions == l2.transactions
        assert (l1.received, l1.sent) == (l2.received, l2.sent)

    def test_duplicate_txids_collapsed(self):
        tx = mktx(1, [("x", 5)], [("a", 5)])
        ledger = AddressLedger.from_transactions("a", [tx, tx, tx])
        assert len(ledger.transactions) == 1
        assert ledger.received == 5

    def test_time_ordering(self):
        t2 = mktx(2, [("x", 1)], [("a", 1)], when=T0 + timedelta(days=2))
        t1 = mktx(1, [("x", 1)], [("a", 1)], when=T0)
        ledger = AddressLedger.from_transactions("a", [t2, t1])
        assert [t.txid for t in ledger.transactions] == [txid(1), txid(2)]

    def test_overdrawn_history_rejected(self):
        tx = mktx(1, [("a", 100)], [("x", 100)])
        with pytest.raises(ChainError, match="spends more"):
            AddressLedger.from_transactions("a", [tx])

    def test_recomputed_fields_match(self):
        rng = random.Random(5)
        txs = []
        funded = 0
        for i in range(20):
            v = rng.randint(1, 1000)
            txs.append(mktx(i, [("ext", v)], [("a", v)]))
            funded += v
        spend = rng.randint(0, funded)
        txs.append(mktx(99, [("a", spend)], [("ext", spend)]))
        ledger = AddressLedger.from_transactions("a", txs)
        assert ledger.received == sum(t.output_to("a") for t in ledger.transactions)
        assert ledger.sent == sum(t.input_from("a") for t in ledger.transactions)
        assert ledger.balance == ledger.received - ledger.sent >= 0


class FakeResponse:
    def __init__(self, status_code, payload=None):
        self.status_code = status_code
        self._payload = payload

    def json(self):
        return self._payload

    def raise_for_status(self):
        if self.status_code >= 400:
            raise FetchError("HTTP %d" % self.status_code)


class FakeSession:
    def __init__(self, script):
        self.script = list(script)
        self.calls = []

    def get(self, url, timeout=None):
        self.calls.append(url)
        item = self.script.pop(0)
        if isinstance(item, Exception):
            raise item
        return item


def tx_rows(start, count):
    return [transaction_to_dict(mktx(n, [("x", 1)], [("a", 1)]))
            for n in range(start, start + count)]


class TestHttpExplorer:
    def test_pagination_no_duplicates(self):
        session = FakeSession([
            FakeResponse(200, {"page": 1, "total_pages": 2, "transactions": tx_rows(0, 50)}),
            FakeResponse(200, {"page": 2, "total_pages": 2, "transactions": tx_rows(50, 50)}),
        ])
        explorer = HttpExplorer("http://x", session=session)
        ledger = fetch_transactions("a", explorer)
        assert len(ledger.transactions) == 100
        assert len({t.txid for t in ledger.transactions}) == 100

    def test_retry_then_success(self):
        session = FakeSession([
            FakeResponse(500),
            FakeResponse(503),
            FakeResponse(200, {"page": 1, "total_pages": 1, "transactions": tx_rows(0, 3)}),
        ])
        explorer = HttpExplorer("http://x", session=session, backoff=0.0)
        assert len(explorer.transactions("a")) == 3

    def test_bounded_retries_then_failure(self):
        session = FakeSession([FakeResponse(500)] * 10)
        explorer = HttpExplorer("http://x", session=session, max_retries=2, backoff=0.0)
        with pytest.raises(FetchError):
            explorer.transactions("a")
        assert len(session.calls) == 3  # initial + 2 retries

    def test_404_is_empty(self):
        explorer = HttpExplorer("http://x", session=FakeSession([FakeResponse(404)]))
        assert explorer.transactions("a") == []

    def test_fetch_all_records_failures(self):
        session = FakeSession([FakeResponse(500)] * 4
                              + [FakeResponse(200, {"page": 1, "total_pages": 1,
                                                    "transactions": []})])
        explorer = HttpExplorer("http://x", session=session, max_retries=3, backoff=0.0)
        ledgers, failures = fetch_all(["bad", "good"], explorer)
        assert "bad" in failures and "good" in ledgers

    def test_against_real_http_server(self):
        import http.server
        import threading

        to_serve = {
            1: {"page": 1, "total_pages": 2, "transactions": tx_rows(0, 2)},
            2: {"page": 2, "total_pages": 2, "transactions": tx_rows(2, 2)},
        }

        class Handler(http.server.BaseHTTPRequestHandler):
            def do_GET(self):
                if "/address/known/" in self.path:
                    page = int(self.path.rsplit("page=", 1)[1])
                    body = json.dumps(to_serve[page]).encode()
                    self.send_response(200)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(body)))
                    self.end_headers()
                    self.wfile.write(body)
                else:
                    self.send_error(404)

            def log_message(self, *args):
                pass

        server = http.server.HTTPServer(("127.0.0.1", 0), Handler)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            base = "http://127.0.0.1:%d" % server.server_address[1]
            explorer = HttpExplorer(base)  # default requests session
            assert len(explorer.transactions("known")) == 4
            assert explorer.transactions("unknown") == []
        finally:
            server.shutdown()

    def test_rate_limit_spaces_request_starts(self, monkeypatch):
        clock = {"now": 0.0}
        naps = []
        monkeypatch.setattr("onionforge.chain.time.monotonic", lambda: clock["now"])

        def fake_sleep(seconds):
            naps.append(seconds)
            clock["now"] += seconds
        monkeypatch.setattr("onionforge.chain.time.sleep", fake_sleep)
        pages = [FakeResponse(200, {"page": 1, "total_pages": 1, "transactions": []})
                 for _ in range(3)]
        explorer = HttpExplorer("http://x", session=FakeSession(pages), rate_limit=2.0)
        for addr in ("a", "b", "c"):
            explorer.transactions(addr)
        # 2 req/s -> second and third starts wait ~0.5s each
        assert len(naps) == 2
        assert all(abs(n - 0.5) < 1e-9 for n in naps)


class TestInternal:
    def test_all_membership_combinations(self):
        illicit = illicit_of(("i1", "s.onion", Category.DRUGS),
                             ("i2", "s.onion", Category.DRUGS))
        for in_has, out_has, multi_in, multi_out in itertools.product(
                (False, True), repeat=4):
            ins = [("i1" if in_has else "e1", 5)]
            outs = [("i2" if out_has else "e2", 5)]
            if multi_in:
                ins.append(("e3", 1))
            if multi_out:
                outs.append(("e4", 1))
            tx = mktx(1, ins, outs)
            assert is_internal(tx, illicit) is (in_has and out_has)

    def test_symmetry(self):
        illicit = illicit_of(("a", "s.onion", Category.DRUGS),
                             ("b", "s.onion", Category.DRUGS))
        fwd = mktx(1, [("a", 5)], [("b", 5)])
        rev = mktx(2, [("b", 5)], [("a", 5)])
        assert is_internal(fwd, illicit) and is_internal(rev, illicit)


def brute_force_income(illicit, ledgers):
    """Oracle: walk every distinct output and test the internality rule."""
    seen = set()
    total = 0
    for ledger in ledgers.values():
        for tx in ledger.transactions:
            if tx.txid in seen:
                continue
            seen.add(tx.txid)
            internal = (any(i.address in illicit for i in tx.inputs)
                        and any(o.address in illicit for o in tx.outputs))
            if internal:
                continue
            for out in tx.outputs:
                if out.address in illicit:
                    total += out.value
    return total


def random_ledger_set(rng, n_addresses=6, n_txs=20):
    pool = ["a%d" % i for i in range(n_addresses)] + ["e%d" % i for i in range(4)]
    illicit = IllicitAddressSet()
    cats = list(Category)[:-1]
    for i in range(n_addresses):
        illicit.add("a%d" % i, "site%d.onion" % i, rng.choice(cats))
    txs = []
    for n in range(n_txs):
        ins = [(rng.choice(pool), rng.randint(1, 500)) for _ in range(rng.randint(1, 3))]
        outs = [(rng.choice(pool), rng.randint(1, 500)) for _ in range(rng.randint(1, 3))]
        txs.append(mktx(n, ins, outs))
    ledgers = {}
    for addr in illicit.addresses():
        mine = [t for t in txs
                if t.output_to(addr) or t.input_from(addr)]
        received = sum(t.output_to(addr) for t in mine)
        spent = sum(t.input_from(addr) for t in mine)
        if spent > received:   # keep the ledger invariant satisfiable
            mine.append(mktx(1000 + hash(addr) % 1000, [("efund", spent)],
                             [(addr, spent)]))
        ledgers[addr] = AddressLedger.from_transactions(addr, mine)
    return illicit, ledgers


class TestIncome:
    def test_internal_transfer_not_double_counted(self):
        illicit = illicit_of(("A", "s.onion", Category.DRUGS),
                             ("B", "t.onion", Category.DRUGS))
        btc = 10 ** 8
        ledgers = {
            "A": AddressLedger.from_transactions("A", [
                mktx(1, [("ext", btc)], [("A", btc)]),
                mktx(2, [("A", 9 * btc // 10)], [("B", 9 * btc // 10)]),
            ]),
            "B": AddressLedger.from_transactions("B", [
                mktx(2, [("A", 9 * btc // 10)], [("B", 9 * btc // 10)]),
            ]),
        }
        report = estimate_income(illicit, ledgers)
        assert report.total == btc
        assert report.internal_txids == {txid(2)}

    def test_no_transactions(self):
        illicit = illicit_of(("A", "s.onion", Category.DRUGS))
        assert estimate_income(illicit, {}).total == 0

    def test_matches_brute_force_oracle(self):
        rng = random.Random(7)
        for trial in range(30):
            illicit, ledgers = random_ledger_set(rng)
            report = estimate_income(illicit, ledgers)
            assert report.total == brute_force_income(illicit, ledgers), trial

    def test_total_bounded_by_gross(self):
        rng = random.Random(11)
        for _ in range(15):
            illicit, ledgers = random_ledger_set(rng)
            report = estimate_income(illicit, ledgers)
            gross = sum(led.received for led in ledgers.values())
            assert report.total <= gross
            if not report.internal_txids:
                assert report.total == gross

    def test_order_permutation_invariant(self):
        rng = random.Random(13)
        illicit, ledgers = random_ledger_set(rng)
        base = estimate_income(illicit, ledgers).total
        shuffled = {}
        for addr, led in ledgers.items():
            txs = list(led.transactions)
            rng.shuffle(txs)
            shuffled[addr] = AddressLedger.from_transactions(addr, txs)
        assert estimate_income(illicit, shuffled).total == base

    def test_split_attribution_preserves_total(self):
        illicit = IllicitAddressSet()
        illicit.add("A", "s.onion", Category.CLONE_CARD)
        illicit.add("A", "t.onion", Category.SEXUAL_ABUSE)
        illicit.add("A", "u.onion", Category.MEMBERSHIPS)
        ledgers = {"A": AddressLedger.from_transactions("A", [
            mktx(1, [("e", 100)], [("A", 100)])])}
        report = estimate_income(illicit, ledgers)
        assert sum(report.by_category_split.values()) == report.total == 100
        assert report.by_category_split[Category.CLONE_CARD] == 34  # remainder goes first
        assert report.by_category_full[Category.MEMBERSHIPS] == 100


class TestActivePeriod:
    def test_same_moment_is_one_day(self):
        ledger = AddressLedger.from_transactions("a", [
            mktx(1, [("x", 1)], [("a", 1)], when=T0),
            mktx(2, [("x", 1)], [("a", 1)], when=T0),
        ])
        assert active_period(ledger) == 1

    def test_inclusive_day_count(self):
        ledger = AddressLedger.from_transactions("a", [
            mktx(1, [("x", 1)], [("a", 1)], when=T0),
            mktx(2, [("x", 1)], [("a", 1)], when=T0 + timedelta(days=365)),
        ])
        assert active_period(ledger) == 366

    def test_empty_is_none(self):
        assert active_period(AddressLedger(address="a")) is None


class TestMultiCategory:
    def test_three_category_address(self):
        illicit = IllicitAddressSet()
        illicit.add("A", "s.onion", Category.CLONE_CARD)
        illicit.add("A", "t.onion", Category.SEXUAL_ABUSE)
        illicit.add("A", "u.onion", Category.MEMBERSHIPS)
        illicit.add("B", "v.onion", Category.DRUGS)
        [entry] = multi_category(illicit)
        assert entry.address == "A"
        assert len(entry.categories) == 3

    def test_all_single_category(self):
        illicit = illicit_of(("A", "s.onion", Category.DRUGS),
                             ("B", "t.onion", Category.WEAPONS))
        assert multi_category(illicit) == []

    def test_sort_by_count_then_received(self):
        illicit = IllicitAddressSet()
        for addr in ("A", "B"):
            illicit.add(addr, "s.onion", Category.CLONE_CARD)
            illicit.add(addr, "t.onion", Category.DRUGS)
        ledgers = {
            "A": AddressLedger.from_transactions("A", [mktx(1, [("x", 10)], [("A", 10)])]),
            "B": AddressLedger.from_transactions("B", [mktx(2, [("x", 90)], [("B", 90)])]),
        }
        assert [e.address for e in multi_category(illicit, ledgers)] == ["B", "A"]


class Site:
    def __init__(self, domain, category):
        self.domain = domain
        self.category = category


class TestFilter:
    def test_private_key_listings_removed(self):
        site = Site("pk.onion", Category.PRIVATE_KEY)
        listed = ["w%d" % i for i in range(10)]
        anns = {("pk.onion", w): AddressAnnotation("pk.onion", w, "listing")
                for w in listed}
        anns[("pk.onion", "pay")] = AddressAnnotation("pk.onion", "pay", "payment")
        result = filter_illicit_addresses(site, listed + ["pay"], anns)
        assert list(result.retained) == ["pay"]
        assert all(reason == "sold-wallet" for reason in result.removed.values())

    def test_forum_address_removed(self):
        site = Site("f.onion", Category.DRUGS)
        anns = {("f.onion", "visitor"): AddressAnnotation("f.onion", "visitor", "forum")}
        result = filter_illicit_addresses(site, ["visitor"], anns)
        assert result.removed == {"visitor": "forum-visitor"}

    def test_listing_with_prior_tx_removed(self):
        site = Site("inv.onion", Category.INVESTMENT_SCAMS)
        anns = {("inv.onion", "shill"): AddressAnnotation(
            "inv.onion", "shill", "listing", prior_tx_with_payment=True)}
        result = filter_illicit_addresses(site, ["shill"], anns)
        assert result.removed == {"shill": "prior-tx-with-payment"}

    def test_flagged_hash_removed(self):
        site = Site("x.onion", Category.HACKER)
        anns = {("x.onion", "hash"): AddressAnnotation("x.onion", "hash", "other")}
        result = filter_illicit_addresses(site, ["hash"], anns)
        assert result.removed == {"hash": "non-payment-hash"}

    def test_unannotated_retained_unreviewed(self):
        site = Site("y.onion", Category.DRUGS)
        result = filter_illicit_addresses(site, ["addr"], {})
        assert result.retained == {"addr": "unreviewed"}

    def test_annotation_file_roundtrip(self, tmp_path):
        path = tmp_path / "ann.jsonl"
        path.write_text(json.dumps({"domain": "d.onion", "address": "a",
                                    "zone": "forum", "note": "visitor"}) + "\n")
        anns = load_annotations(path)
        assert anns[("d.onion", "a")].zone == "forum"

    def test_illicit_set_rejects_other(self):
        illicit = IllicitAddressSet()
        with pytest.raises(ChainError):
            illicit.add("a", "s.onion", Category.OTHER)


class TestDormant:
    def test_disabled_by_default(self):
        assert dormant_addresses({}, 0) == []

    def test_threshold(self):
        ledgers = {
            "low": AddressLedger.from_transactions("low", [
                mktx(1, [("x", 10)], [("low", 10)])]),
            "high": AddressLedger.from_transactions("high", [
                mktx(2, [("x", 1000)], [("high", 1000)])]),
        }
        assert dormant_addresses(ledgers, 100) == ["low"]


def test_unique_transactions_dedups_and_orders_by_time():
    tx1 = mktx(1, [("a", 1)], [("b", 1)])
    tx2 = mktx(2, [("b", 1)], [("a", 1)])
    l1 = AddressLedger.from_transactions("a", [
        mktx(0, [("x", 2)], [("a", 2)]), tx1, tx2])
    l2 = AddressLedger.from_transactions("b", [
        mktx(3, [("x", 2)], [("b", 2)]), tx1, tx2])
    merged = unique_transactions({"a": l1, "b": l2})
    assert len(merged) == 4  # tx1/tx2 shared between ledgers appear once
    stamps = [t.timestamp for t in merged]
    assert stamps == sorted(stamps)
