"""Shared fixtures for the service-level tests.

Builds one small trained scoring model over two synthetic trinkets; the
heavy image processing runs once per session.
"""

import sys

import numpy as np
import pytest

from trinketauth import learn
from trinketauth.filters import FilterRuleConfig
from trinketauth.simfeat import (
    FEATURE_NAMES,
    build_reference_set,
    extract_features,
    process_image,
)
from trinketauth.synthcorpus import trinket_views

# recalibrated for the synthetic corpus; see the packaged default_filters.cfg
SYNTH_FILTER_CFG = FilterRuleConfig(ref_avg_cross_sim_min=0.1)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    lines = getattr(acceptance, "ACCEPTANCE_LINES", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def trinket_a_views():
    return trinket_views(42)


@pytest.fixture(scope="session")
def trinket_b_views():
    return trinket_views(43)


@pytest.fixture(scope="session")
def processed_pair(trinket_a_views, trinket_b_views):
    pa = [process_image(v, f"a{i}") for i, v in enumerate(trinket_a_views)]
    pb = [process_image(v, f"b{i}") for i, v in enumerate(trinket_b_views)]
    return pa, pb


@pytest.fixture(scope="session")
def scoring_model(processed_pair):
    pa, pb = processed_pair
    rs_a = build_reference_set(pa[:3])
    rs_b = build_reference_set(pb[:3])
    rows, labels = [], []
    for cand, refset, label in [
        (pa[3], rs_a, 1), (pb[3], rs_b, 1),
        (pa[0], rs_a, 1), (pb[0], rs_b, 1),
        (pb[3], rs_a, 0), (pa[3], rs_b, 0),
        (pb[0], rs_a, 0), (pa[0], rs_b, 0),
    ]:
        rows.append(extract_features(cand, refset))
        labels.append(label)
    ds = learn.Dataset(np.array(rows), np.array(labels), tuple(FEATURE_NAMES))
    return learn.train("RF", ds, {"n_trees": 25}, seed=0)
