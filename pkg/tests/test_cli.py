import json

import pytest

from onionforge.cli import EXIT_CONFIG, EXIT_OK, EXIT_STAGE, main

from planted import EXPECTED_CAMPAIGNS, build_planted_corpus


@pytest.fixture()
def planted(tmp_path):
    return build_planted_corpus(tmp_path / "planted"), tmp_path


def test_ingest_and_extract(planted):
    corpus_obj, tmp = planted
    corpus = tmp / "corpus.jsonl"
    assert main(["ingest", "--root", str(corpus_obj.snapshot),
                 "--out", str(corpus)]) == EXIT_OK
    assert corpus.exists()
    addresses = tmp / "addresses.jsonl"
    assert main(["extract", "--corpus", str(corpus),
                 "--out", str(addresses)]) == EXIT_OK
    kinds = {json.loads(line)["kind"] for line in addresses.read_text().splitlines()}
    assert "btc" in kinds and "email" in kinds


def test_stagewise_matches_run(planted):
    corpus_obj, tmp = planted
    out = tmp / "out"
    cfg = tmp / "run.cfg"
    cfg.write_text(corpus_obj.config_text(out))
    assert main(["run", "--config", str(cfg)]) == EXIT_OK
    doc = json.loads((out / "campaigns.json").read_text())
    got = [{k: c[k] for k in ("sites", "btc_addresses", "emails", "ips",
                              "urls", "categories", "received")}
           for c in doc["campaigns"]]
    assert got == EXPECTED_CAMPAIGNS

    # the same stages driven individually agree with the orchestrated run
    alt = tmp / "alt"
    alt.mkdir()
    assert main(["classify", "--corpus", str(out / "corpus.jsonl"),
                 "--ground-truth", str(corpus_obj.ground_truth),
                 "--out", str(alt / "labels.jsonl")]) == EXIT_OK
    assert (alt / "labels.jsonl").read_bytes() == (out / "labels.jsonl").read_bytes()

    assert main(["filter", "--labels", str(alt / "labels.jsonl"),
                 "--addresses", str(out / "addresses.jsonl"),
                 "--annotations", str(corpus_obj.chain_annotations),
                 "--out", str(alt / "illicit.jsonl")]) == EXIT_OK
    assert (alt / "illicit.jsonl").read_bytes() == (out / "illicit.jsonl").read_bytes()

    assert main(["fetch-tx", "--addresses", str(alt / "illicit.jsonl"),
                 "--provider", "fixtures", "--fixtures", str(corpus_obj.tx_fixtures),
                 "--out", str(alt / "ledgers")]) == EXIT_OK
    assert (alt / "ledgers" / "_index.jsonl").read_bytes() == \
        (out / "ledgers" / "_index.jsonl").read_bytes()

    assert main(["trace", "--addresses", str(alt / "illicit.jsonl"),
                 "--provider", "fixtures", "--fixtures", str(corpus_obj.search_fixtures),
                 "--annotations", str(corpus_obj.trace_annotations),
                 "--out", str(alt / "hits.jsonl"),
                 "--surface-out", str(alt / "surface.jsonl")]) == EXIT_OK
    assert (alt / "hits.jsonl").read_bytes() == (out / "hits.jsonl").read_bytes()

    assert main(["cluster", "--labels", str(alt / "labels.jsonl"),
                 "--illicit", str(alt / "illicit.jsonl"),
                 "--ledgers", str(alt / "ledgers"),
                 "--emails", str(out / "addresses.jsonl"),
                 "--surface", str(alt / "surface.jsonl"),
                 "--out", str(alt / "campaigns.json"),
                 "--trace", str(alt / "phase_trace.json")]) == EXIT_OK
    assert (alt / "campaigns.json").read_bytes() == (out / "campaigns.json").read_bytes()
    assert (alt / "phase_trace.json").read_bytes() == \
        (out / "phase_trace.json").read_bytes()


def test_bad_config_exit_code(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("corpus_root = /nonexistent\n")
    assert main(["run", "--config", str(cfg)]) == EXIT_CONFIG


def test_stage_failure_exit_code(planted):
    corpus_obj, tmp = planted
    corpus_obj.ground_truth.write_text(
        '{"domain": "missing.onion", "path": "/", "category": "Drugs"}\n')
    cfg = tmp / "run.cfg"
    cfg.write_text(corpus_obj.config_text(tmp / "out"))
    assert main(["run", "--config", str(cfg)]) == EXIT_STAGE


def test_missing_input_file_exit_code(tmp_path):
    assert main(["extract", "--corpus", str(tmp_path / "absent.jsonl"),
                 "--out", str(tmp_path / "x.jsonl")]) == EXIT_STAGE
