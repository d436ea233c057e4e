"""Python bindings for the wagparse graph parser.

Graphs and records are plain dicts in the corpus JSON layout.
"""

import json

from . import _wagparse
from ._wagparse import Error, beta_at, kl_div

__all__ = [
    "Error",
    "Parser",
    "beta_at",
    "delinearize",
    "generate_corpus",
    "grad_check",
    "kl_div",
    "linearize",
    "smatch",
    "smatch_exact",
    "wag",
]


def generate_corpus(n, seed=7, spec=None):
    return json.loads(_wagparse.generate_corpus(n, seed, json.dumps(spec) if spec else ""))


def linearize(graph):
    return _wagparse.linearize(json.dumps(graph))


def delinearize(text):
    graph, repairs = _wagparse.delinearize(text)
    return json.loads(graph), repairs


def wag(record, variant="full"):
    return json.loads(_wagparse.wag(json.dumps(record), variant))


def smatch(pred, gold, restarts=10, seed=1):
    return _wagparse.smatch(json.dumps(pred), json.dumps(gold), restarts, seed)


def smatch_exact(pred, gold, unlabeled=False):
    return _wagparse.smatch_exact(json.dumps(pred), json.dumps(gold), unlabeled)


def grad_check(config=None, samples=6):
    return _wagparse.grad_check(json.dumps(config) if config else "", samples)


class Parser:
    def __init__(self, model_dir):
        self._impl = _wagparse.Parser(str(model_dir))

    def parse(self, sentence, beam=4):
        text, graph = self._impl.parse(sentence, beam)
        return text, json.loads(graph)
