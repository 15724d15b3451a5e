"""Shared fixtures: expensive sweeps and charts are built once per session."""

import numpy as np
import pytest

from instab import harness
from instab.charts import build_chart, BaseSurfaceMap
from instab.expr import ScalarField
from instab.geometry import MetricSpec


@pytest.fixture(scope="session")
def corpus_sweeps():
    """Epsilon sweeps for every corpus entry, keyed by entry name."""
    return {
        problem.name: harness.run_epsilon_sweep(
            problem, with_certification=False)
        for problem in harness.corpus()
    }


@pytest.fixture(scope="session")
def origin_chart():
    """Single-function adapted chart for x1 + x3^2 around the origin."""
    metric = MetricSpec.identity(3)
    f = ScalarField.parse("x1 + x3^2", 3)
    psi = BaseSurfaceMap(
        [ScalarField.parse(s, 2) for s in ("-x2^2", "x1", "x2")],
        [(-0.4, 0.4), (-0.4, 0.4)],
    )
    return build_chart(metric, f, psi, (-0.25, 0.25), grid_count=9)


@pytest.fixture(scope="session")
def corollary_chart():
    """Two-function chart with its pullback magnetic form."""
    problem = harness.corpus_entry("corollary1-unstable-magnetic")
    chart, fields, pullback = harness.build_problem_chart(problem)
    return problem, chart, fields, pullback


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260823)
