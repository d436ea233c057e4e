import math

import pytest

import wagparse


def test_corpus_round_trip():
    corpus = wagparse.generate_corpus(20, seed=3)
    assert len(corpus) == 20
    assert corpus == wagparse.generate_corpus(20, seed=3)
    for record in corpus:
        text = wagparse.linearize(record["graph"])
        graph, repairs = wagparse.delinearize(text)
        assert repairs == []
        assert wagparse.smatch(graph, record["graph"])["f1"] == 1.0


def test_wag_variants():
    record = wagparse.generate_corpus(1, seed=5)[0]
    full = wagparse.wag(record, "full")
    contracted = wagparse.wag(record, "contracted")
    assert len(contracted["nodes"]) <= len(full["nodes"])
    assert all(node["kind"] == "aligned" for node in contracted["nodes"])
    assert any(node["kind"] == "virtual" for node in full["nodes"])


def test_smatch_and_exact_agree():
    corpus = wagparse.generate_corpus(6, seed=9)
    small = [r["graph"] for r in corpus if len(r["graph"]["nodes"]) <= 5]
    for a in small:
        for b in small:
            assert wagparse.smatch(a, b)["f1"] == pytest.approx(wagparse.smatch_exact(a, b))


def test_schedule_and_kl():
    assert wagparse.beta_at(90, 10, 21000, 0) == 90
    assert wagparse.beta_at(90, 10, 21000, 10500) == 50
    assert wagparse.beta_at(90, 10, 21000, 40000) == 10
    kl = wagparse.kl_div([math.log(0.5), math.log(0.5)], [math.log(0.9), math.log(0.1)])
    assert kl == pytest.approx(0.5108, abs=1e-4)


def test_errors_carry_a_category():
    with pytest.raises(wagparse.Error, match="^structural:"):
        wagparse.linearize({"nodes": [{"id": "a", "concept": "x"}], "edges": [
            {"source": "a", "relation": ":mod", "target": "a"}], "root": "a"})
