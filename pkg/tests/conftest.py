import json
import random
from pathlib import Path

import pytest

from sqldst.ontology import bundled_ontology
from sqldst.prompting import TurnContext

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def data_dir():
    return DATA_DIR


@pytest.fixture(scope="session")
def few_ont():
    return bundled_ontology("multiwoz")


@pytest.fixture(scope="session")
def zero_ont():
    return bundled_ontology("multiwoz-zeroshot")


def load_exemplar_fixture(path):
    """(exemplars, test_ctx) from a stored prompt-exemplar fixture."""
    fix = json.loads(Path(path).read_text())
    exemplars = [
        (TurnContext(e["prev_state"], e["system"], e["user"]), e["change"])
        for e in fix["exemplars"]
    ]
    t = fix["test"]
    return exemplars, TurnContext(t["prev_state"], t["system"], t["user"])


def random_change(rng: random.Random, ont, n_domains=(1, 3), n_slots=(1, 3),
                  p_delete=0.15) -> dict:
    """An ontology-valid random state change, safe for both codecs."""
    change = {}
    domains = rng.sample(ont.domains, rng.randint(*n_domains))
    for dom in domains:
        slots = rng.sample(list(ont.domain(dom).slots),
                           min(rng.randint(*n_slots), len(ont.domain(dom).slots)))
        for sdef in slots:
            if rng.random() < p_delete:
                value = "NONE"
            elif sdef.values and rng.random() < 0.8:
                value = rng.choice(list(sdef.values))
            else:
                value = rng.choice(["saint john s college", "pizza hut fen ditton",
                                    "a and b guest house", "dontcare", "08:15"])
            change[f"{dom}-{sdef.name}"] = value
    return change
