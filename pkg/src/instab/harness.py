"""End-to-end experiments: problem definitions, sweeps, escape detection.

A problem bundles a metric, a potential, an optional magnetic one-form and
a candidate function around a zero-potential center. The sweep integrates
the rescaled dynamics for a decreasing list of epsilon values with initial
velocity grad_rho f(p); escape detection then reads the instability
witness off the family of f-composed curves. Verdicts are phrased as
"demonstrated at the tested scales": a finite sweep is evidence for the
existential statement, not a proof of it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import certify as _certify
from .dynamics import (
    LagrangianSystem,
    State,
    Tolerances,
    check_lemma1_bounds,
    integrate,
)
from .errors import (
    DomainError,
    EnergyDriftExceeded,
    ExprSyntaxError,
    InstabError,
    IntegrationError,
    NoPositiveDrift,
    NonFiniteResult,
    StepSizeUnderflow,
    ValidationError,
)
from .expr import MAX_DIMENSION, ScalarField
from .geometry import MetricSpec, OneForm

DEFAULT_EPSILONS = (1e-1, 1e-2, 1e-3)
CENTER_POTENTIAL_TOL = 1e-12
GRADIENT_FLOOR = 1e-6
DRIFT_FRACTION = 0.01  # of |grad f(p)|^2 T; escape needs 10x this


@dataclass
class ProblemDefinition:
    name: str
    dimension: int
    metric: MetricSpec
    potential: ScalarField
    magnetic: OneForm | None
    f: ScalarField
    center: np.ndarray
    horizon: float
    epsilons: tuple
    expected: str | None = None  # "stable" | "unstable" | None
    chart: dict | None = None
    quasi_homogeneous: dict | None = None
    probe: dict = field(default_factory=dict)
    labels: dict = field(default_factory=dict)

    def system(self, epsilon=None) -> LagrangianSystem:
        return LagrangianSystem(self.metric, self.potential, self.magnetic,
                                epsilon=epsilon)

    def gradient_data(self):
        """(df(p), grad_rho f(p), |grad f(p)|^2)."""
        df = self.f.grad(self.center)
        grad = (df if self.metric.euclidean
                else self.metric.inverse(self.center) @ df)
        return df, grad, float(df @ grad)

    def to_dict(self):
        return {
            "name": self.name,
            "dimension": self.dimension,
            "metric": ("euclidean" if self.metric.euclidean else [
                [self.metric.entry(i, j).source
                 for j in range(self.dimension)]
                for i in range(self.dimension)
            ]),
            "potential": self.potential.source,
            "magnetic": (None if self.magnetic is None
                         else [c.source for c in self.magnetic.components]),
            "f": self.f.source,
            "center": [float(c) for c in self.center],
            "T": self.horizon,
            "epsilons": [float(e) for e in self.epsilons],
            "chart": self.chart,
            "quasi_homogeneous": self.quasi_homogeneous,
            "expected": self.expected,
            "labels": self.labels,
        }


def _parse_field(source, dimension, problems, what):
    try:
        return ScalarField.parse(str(source), dimension)
    except (ExprSyntaxError, ValueError) as exc:
        problems.append(f"{what}: {exc}")
        return None


def load_problem(data, name=None) -> ProblemDefinition:
    """Validate a problem mapping (or JSON file path) into a definition.

    All validation failures are gathered into one ValidationError rather
    than stopping at the first.
    """
    if isinstance(data, (str, bytes)) or hasattr(data, "read"):
        if hasattr(data, "read"):
            data = json.load(data)
        else:
            with open(data) as fh:
                data = json.load(fh)
    problems = []

    n = data.get("dimension")
    if not isinstance(n, int) or not 1 <= n <= MAX_DIMENSION:
        problems.append(f"dimension must be an integer in 1..{MAX_DIMENSION}")
        raise ValidationError(problems)

    metric_data = data.get("metric", "euclidean")
    metric = None
    if metric_data == "euclidean":
        metric = MetricSpec.identity(n)
    elif (isinstance(metric_data, list) and len(metric_data) == n
          and all(isinstance(r, list) and len(r) == n for r in metric_data)):
        try:
            metric = MetricSpec.from_sources(n, metric_data)
        except (ExprSyntaxError, ValueError) as exc:
            problems.append(f"metric: {exc}")
    else:
        problems.append('metric must be "euclidean" or an n x n expression '
                        "matrix")

    potential = _parse_field(data.get("potential", ""), n, problems,
                             "potential")
    f_field = _parse_field(data.get("f", ""), n, problems, "f")

    magnetic = None
    mag_data = data.get("magnetic")
    if mag_data is not None:
        if not (isinstance(mag_data, list) and len(mag_data) == n):
            problems.append("magnetic must be null or a list of n "
                            "component expressions")
        else:
            comps = [_parse_field(src, n, problems, f"magnetic[{i}]")
                     for i, src in enumerate(mag_data)]
            if all(c is not None for c in comps):
                magnetic = OneForm(n, comps)

    center = np.asarray(data.get("center", []), dtype=float)
    center_ok = center.shape == (n,)
    if not center_ok:
        problems.append("center must be a list of n reals")
        center = np.zeros(n)

    horizon = data.get("T", 1.0)
    if not (isinstance(horizon, (int, float)) and horizon > 0):
        problems.append("T must be a positive real")

    epsilons = tuple(data.get("epsilons", DEFAULT_EPSILONS))
    if not epsilons or any(e <= 0 for e in epsilons):
        problems.append("epsilons must be positive")
    elif any(b >= a for a, b in zip(epsilons, epsilons[1:])):
        problems.append("epsilons must be strictly decreasing")

    expected = data.get("expected")
    if expected not in (None, "stable", "unstable"):
        problems.append('expected must be "stable", "unstable" or null')

    if potential is not None and center_ok:
        try:
            u0 = potential.eval(center)
            if abs(u0) > CENTER_POTENTIAL_TOL:
                problems.append(
                    f"center is not a zero-potential point (U = {u0:.3e})")
        except (DomainError, NonFiniteResult) as exc:
            problems.append(f"potential at center: {exc}")
    if f_field is not None and metric is not None and center_ok:
        try:
            df = f_field.grad(center)
            grad = df if metric.euclidean else metric.inverse(center) @ df
            if float(df @ grad) < GRADIENT_FLOOR ** 2:
                problems.append("gradient of f at the center is below "
                                f"{GRADIENT_FLOOR:.0e}")
        except (DomainError, NonFiniteResult, InstabError) as exc:
            problems.append(f"f at center: {exc}")

    if problems:
        raise ValidationError(problems)
    return ProblemDefinition(
        name=name or data.get("name", "problem"),
        dimension=n,
        metric=metric,
        potential=potential,
        magnetic=magnetic,
        f=f_field,
        center=center,
        horizon=float(horizon),
        epsilons=tuple(float(e) for e in epsilons),
        expected=expected,
        chart=data.get("chart"),
        quasi_homogeneous=data.get("quasi_homogeneous"),
        probe=data.get("probe", {}),
        labels=data.get("labels", {}),
    )


# --- built-in corpus --------------------------------------------------------

_PLANE = {
    "dimension": 3,
    "potential": "x3^2",
    "f": "x1",
    "center": [0.0, 0.0, 0.0],
    "T": 1.0,
}

_COROLLARY1 = {
    "dimension": 3,
    "potential": "(x1 + x3^2)^2 + x2^2",
    "f": "x1 - ln(x3)/2",
    "center": [-1.0, 0.0, 1.0],
    "T": 0.4,
    # base curve s -> (-s^2, 0, s) stays in x3 > 0 where f is defined
    "chart": {
        "fields": ["x1 + x3^2", "x2"],
        "psi": ["-x1^2", "0", "x1"],
        "base_box": [[0.6, 1.4]],
        "level_box": [[-0.25, 0.25], [-0.25, 0.25]],
        "omega": ["0", "x1"],
    },
}

_CORPUS_DATA = [
    ("stable-magnetic-plane", dict(
        _PLANE,
        magnetic=["0", "x1", "0"],
        expected="stable",
        labels={"certification": "refuted",
                "note": "gyroscopic coupling stabilizes the plane of "
                        "equilibria"},
    )),
    ("unstable-magnetic-plane", dict(
        _PLANE,
        magnetic=["0", "x3", "0"],
        expected="unstable",
        labels={"certification": "certified"},
    )),
    ("mechanical-plane", dict(
        _PLANE,
        magnetic=None,
        expected="unstable",
        labels={"certification": "certified"},
    )),
    ("whitney-umbrella", dict(
        dimension=3,
        potential="(x1^2 - x2^2*x3)^2",
        magnetic=None,
        f="(x1^2 + x2^2)/2",
        center=[1.0, 1.0, 1.0],
        T=0.4,
        expected="unstable",
        quasi_homogeneous={"weights": [1, 1, 0], "degree": 4},
        probe={"radius": 0.4},
        labels={"certification": "certified"},
    )),
    ("kolibri", dict(
        dimension=3,
        potential="(x1^2*x3^2 + x1^3 - x2^2)^2",
        magnetic=None,
        f="x1^2 + 3*x2^2/2 + x3^2/2",
        center=[1.0, 1.0, 0.0],
        T=0.3,
        expected="unstable",
        quasi_homogeneous={"weights": [2, 3, 1], "degree": 12},
        probe={"radius": 0.4},
        labels={"certification": "certified"},
    )),
    ("crossing-axes", dict(
        dimension=2,
        potential="x1^2*x2^2",
        magnetic=None,
        f="x1",
        center=[0.0, 0.0],
        T=1.0,
        expected="unstable",
        labels={"certification": "refuted",
                "note": "no smooth candidate function works at the "
                        "origin; f = x1 escapes along an axis but fails "
                        "certification"},
    )),
    ("corollary1-unstable-magnetic", dict(
        _COROLLARY1,
        magnetic=["0", "x1 + x3^2", "0"],
        expected="unstable",
        labels={"certification": "certified",
                "note": "magnetic form is the pullback of a level-space "
                        "one-form; its field is nonzero on the "
                        "zero-potential surface"},
    )),
    ("corollary1-mechanical", dict(
        _COROLLARY1,
        magnetic=None,
        expected="unstable",
        chart={
            "fields": ["x1 + x3^2"],
            "psi": ["-x2^2", "x1", "x2"],
            "base_box": [[-0.4, 0.4], [-0.4, 0.4]],
            "level_box": [[-0.25, 0.25]],
        },
        labels={"certification": "certified"},
    )),
]


def corpus() -> list:
    """The built-in problem definitions, validated on construction."""
    out = []
    for name, data in _CORPUS_DATA:
        out.append(load_problem(dict(data), name=name))
    return out


def corpus_entry(name) -> ProblemDefinition:
    for entry in corpus():
        if entry.name == name:
            return entry
    raise KeyError(name)


# --- sweeps and escape detection --------------------------------------------


@dataclass
class SweepRun:
    epsilon: float
    status: str  # "ok" | "failed"
    error: str | None = None
    trajectory: object = None
    f_curve: np.ndarray | None = None  # f(x_eps) - f(p) on the uniform grid
    bounds: object = None
    zdot0: float = 0.0
    zdot0_residual: float = 0.0

    def to_dict(self):
        out = {
            "epsilon": self.epsilon,
            "status": self.status,
            "error": self.error,
            "zdot0": self.zdot0,
            "zdot0_residual": self.zdot0_residual,
        }
        if self.trajectory is not None:
            out["energy_drift"] = self.trajectory.energy_drift
            out["max_speed"] = self.trajectory.max_speed
            out["max_potential"] = self.trajectory.max_potential
            out["steps"] = self.trajectory.stats["steps"]
        if self.bounds is not None:
            out["bounds"] = {
                "passed": self.bounds.passed,
                "speed_margin": self.bounds.speed_margin,
                "potential_margin": self.bounds.potential_margin,
            }
        if self.f_curve is not None:
            out["f_curve_subsampled"] = [float(v)
                                         for v in self.f_curve[::8]]
        return out


@dataclass
class EscapeVerdict:
    verdict: str
    level: float
    threshold: float
    drift_tolerance: float
    crossings: list  # per run: {"epsilon", "tau_star", "physical_time"}
    initial_speeds: list

    def to_dict(self):
        return {
            "verdict": self.verdict,
            "level": self.level,
            "threshold": self.threshold,
            "drift_tolerance": self.drift_tolerance,
            "crossings": self.crossings,
            "initial_speeds": self.initial_speeds,
        }


@dataclass
class EscapeReport:
    problem: str
    cap_sq: float  # |grad f(p)|^2, the universal initial drift
    horizon: float
    runs: list
    sup_distances: list  # consecutive f-curve sup gaps, coarse to fine
    limit_drift: float
    certification: dict = field(default_factory=dict)
    escape: EscapeVerdict | None = None

    def finest_ok_run(self):
        for run in reversed(self.runs):
            if run.status == "ok":
                return run
        return None

    def to_dict(self):
        return {
            "problem": self.problem,
            "cap_sq": self.cap_sq,
            "horizon": self.horizon,
            "runs": [r.to_dict() for r in self.runs],
            "sup_distances": self.sup_distances,
            "limit_drift": self.limit_drift,
            "certification": self.certification,
            "escape": None if self.escape is None else self.escape.to_dict(),
        }


def _certification_verdicts(problem, seed=0):
    probe_kwargs = dict(problem.probe)
    probe = _certify.HypothesisProbe(
        metric=problem.metric,
        potential=problem.potential,
        f=problem.f,
        magnetic=problem.magnetic,
        center=problem.center,
        seed=seed,
        **probe_kwargs,
    )
    out = {}
    try:
        out["potential"] = _certify.certify_potential_condition(probe).verdict
    except InstabError as exc:
        out["potential"] = f"error: {exc}"
    try:
        out["magnetic"] = _certify.certify_magnetic_condition(probe).verdict
    except InstabError as exc:
        out["magnetic"] = f"error: {exc}"
    return out


def run_epsilon_sweep(problem, tol=None, seed=0,
                      with_certification=True) -> EscapeReport:
    """Integrate the rescaled system for every epsilon in the problem.

    Initial data is x(0) = p, v(0) = grad_rho f(p) for every epsilon; each
    run is checked against the confinement bounds and the universal initial
    drift df(v(0)) = |grad f(p)|^2. Failures of individual runs are
    recorded and the sweep continues.
    """
    tol = tol or Tolerances()
    df, grad, cap_sq = problem.gradient_data()
    f_center = problem.f.eval(problem.center)
    cap = float(np.sqrt(cap_sq))

    runs = []
    for eps in problem.epsilons:
        system = problem.system(epsilon=eps)
        zdot0 = float(df @ grad)
        try:
            trajectory = integrate(
                system, State(0.0, problem.center, grad),
                problem.horizon, tol=tol,
            )
        except (IntegrationError, StepSizeUnderflow, EnergyDriftExceeded,
                DomainError, NonFiniteResult, ValueError) as exc:
            runs.append(SweepRun(epsilon=eps, status="failed",
                                 error=f"{type(exc).__name__}: {exc}",
                                 zdot0=zdot0,
                                 zdot0_residual=abs(zdot0 - cap_sq)))
            continue
        n = trajectory.dimension
        curve = np.array([
            problem.f.eval(row[:n]) - f_center
            for row in trajectory.grid_states
        ])
        runs.append(SweepRun(
            epsilon=eps,
            status="ok",
            trajectory=trajectory,
            f_curve=curve,
            bounds=check_lemma1_bounds(trajectory, cap),
            zdot0=zdot0,
            zdot0_residual=abs(zdot0 - cap_sq),
        ))

    ok = [r for r in runs if r.status == "ok"]
    sup_distances = [
        float(np.max(np.abs(a.f_curve - b.f_curve)))
        for a, b in zip(ok, ok[1:])
    ]
    limit_drift = float("nan")
    if ok:
        grid = ok[-1].trajectory.grid_times
        h = grid[1] - grid[0]
        mid = len(grid) // 2  # grid point at tau = 0
        curve = ok[-1].f_curve
        limit_drift = float(
            (curve[mid - 2] - 8 * curve[mid - 1]
             + 8 * curve[mid + 1] - curve[mid + 2]) / (12 * h))

    certification = {}
    if with_certification:
        certification = _certification_verdicts(problem, seed=seed)

    return EscapeReport(
        problem=problem.name,
        cap_sq=cap_sq,
        horizon=problem.horizon,
        runs=runs,
        sup_distances=sup_distances,
        limit_drift=limit_drift,
        certification=certification,
    )


def detect_escape(report, level="auto", drift_tolerance=None) -> EscapeVerdict:
    """Read the escape witness off a sweep report.

    In auto mode the escape level is the maximum of the finest-epsilon
    f-curve over [0, T] (the numerical surrogate for the limit curve);
    escape is demonstrated when every run crosses half that level before T.
    """
    finest = report.finest_ok_run()
    if finest is None:
        raise IntegrationError("no successful runs to detect escape on")
    if drift_tolerance is None:
        drift_tolerance = DRIFT_FRACTION * report.cap_sq * report.horizon
    grid = finest.trajectory.grid_times
    forward = grid >= 0.0
    if level == "auto":
        level = float(np.max(finest.f_curve[forward]))
        if level <= 10.0 * drift_tolerance:
            raise NoPositiveDrift(level, 10.0 * drift_tolerance)
    level = float(level)

    crossings = []
    speeds = []
    all_cross = True
    for run in report.runs:
        cap = float(np.sqrt(report.cap_sq))
        speeds.append(run.epsilon * cap)
        if run.status != "ok":
            crossings.append({"epsilon": run.epsilon, "tau_star": None,
                              "physical_time": None})
            all_cross = False
            continue
        tau_star = _first_crossing(grid[forward], run.f_curve[forward],
                                   level / 2.0)
        crossings.append({
            "epsilon": run.epsilon,
            "tau_star": tau_star,
            "physical_time": (None if tau_star is None
                              else tau_star / run.epsilon),
        })
        if tau_star is None:
            all_cross = False
    threshold = report.runs[0].epsilon if all_cross else float("nan")
    verdict = ("escape demonstrated at the tested scales" if all_cross
               else "no escape at the tested scales")
    out = EscapeVerdict(
        verdict=verdict,
        level=level,
        threshold=float(threshold),
        drift_tolerance=float(drift_tolerance),
        crossings=crossings,
        initial_speeds=[float(s) for s in speeds],
    )
    report.escape = out
    return out


def _first_crossing(taus, values, target):
    above = values >= target
    if not np.any(above):
        return None
    k = int(np.argmax(above))
    if k == 0:
        return float(taus[0])
    t0, t1 = taus[k - 1], taus[k]
    v0, v1 = values[k - 1], values[k]
    if v1 == v0:
        return float(t1)
    return float(t0 + (target - v0) * (t1 - t0) / (v1 - v0))


def physical_consistency(problem, epsilon, fractions=(0.25, 0.5, 1.0),
                         tol=None):
    """Spot-check the two time parameterizations against each other.

    The unscaled system started with speed epsilon |grad f(p)| and run to
    physical time tau/epsilon must land where the rescaled run is at tau.
    Returns the worst Euclidean mismatch over the requested fractions of T.
    """
    tol = tol or Tolerances()
    _df, grad, _cap_sq = problem.gradient_data()
    rescaled = integrate(
        problem.system(epsilon=epsilon),
        State(0.0, problem.center, grad),
        problem.horizon, tol=tol,
    )
    physical = integrate(
        problem.system(epsilon=None),
        State(0.0, problem.center, epsilon * grad),
        problem.horizon / epsilon, tol=tol,
    )
    n = problem.dimension
    grid = rescaled.grid_times
    worst = 0.0
    for frac in fractions:
        tau = frac * problem.horizon
        i = int(np.argmin(np.abs(grid - tau)))
        j = int(np.argmin(np.abs(physical.grid_times - grid[i] / epsilon)))
        a = rescaled.grid_states[i, :n]
        # physical grid rarely hits tau/eps exactly; re-interpolate linearly
        t_phys = grid[i] / epsilon
        b = _interp_state(physical, t_phys, n)
        worst = max(worst, float(np.linalg.norm(a - b)))
        del j
    return worst


def _interp_state(trajectory, t, n):
    times = trajectory.grid_times
    k = int(np.clip(np.searchsorted(times, t), 1, len(times) - 1))
    t0, t1 = times[k - 1], times[k]
    w = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
    row = (1 - w) * trajectory.grid_states[k - 1] + w * trajectory.grid_states[k]
    return row[:n]


def build_problem_chart(problem):
    """Instantiate and verify the chart attached to a problem definition.

    Returns (chart, level_fields, pullback_form) with the pullback form
    present only when the chart spec carries a level-space one-form.
    """
    from .charts import BaseSurfaceMap, build_chart, build_multi_chart

    spec = problem.chart
    if spec is None:
        raise ValidationError("problem has no chart specification")
    n = problem.dimension
    fields = [ScalarField.parse(s, n) for s in spec["fields"]]
    k = len(fields)
    base_dim = n - k
    psi = BaseSurfaceMap(
        [ScalarField.parse(s, base_dim) for s in spec["psi"]],
        [tuple(b) for b in spec["base_box"]],
    )
    if k == 1:
        chart = build_chart(problem.metric, fields[0], psi,
                            tuple(spec["level_box"][0]))
    else:
        chart = build_multi_chart(problem.metric, fields, psi,
                                  [tuple(b) for b in spec["level_box"]])
    pullback = None
    if spec.get("omega") is not None:
        omega = OneForm(k, [ScalarField.parse(s, k)
                            for s in spec["omega"]])
        pullback = _certify.build_pullback_magnetic(fields, omega)
    return chart, fields, pullback


def run_all(seed=42, tol=None):
    """Sweep plus escape detection over the whole corpus.

    Returns (reports, all_expected) where reports is a list of plain dicts
    and all_expected says whether every verdict matched its label.
    """
    reports = []
    all_expected = True
    for problem in corpus():
        report = run_epsilon_sweep(problem, tol=tol, seed=seed)
        outcome = None
        try:
            verdict = detect_escape(report)
            outcome = ("unstable"
                       if verdict.verdict.startswith("escape") else None)
        except NoPositiveDrift as exc:
            outcome = "stable"
            report.escape = EscapeVerdict(
                verdict="no positive drift at this horizon",
                level=exc.level, threshold=float("nan"),
                drift_tolerance=exc.threshold, crossings=[],
                initial_speeds=[])
        matched = (problem.expected is None or outcome == problem.expected)
        expected_cert = problem.labels.get("certification")
        if expected_cert is not None:
            got = report.certification.get("potential")
            if problem.magnetic is not None \
                    and report.certification.get("magnetic") == "refuted":
                got = "refuted"
            matched = matched and (got == expected_cert)
        all_expected = all_expected and matched
        entry = report.to_dict()
        entry["expected"] = problem.expected
        entry["outcome"] = outcome
        entry["matched"] = matched
        reports.append(entry)
    return reports, all_expected
