"""Problem data for the game and numeric validators for its assumptions.

A model bundles the noise intensities, the horizon, the initial law and a
terminal cost family g(x, m) together with the derivative evaluators the
solvers need: gx = dg/dx, gxx, and the measure derivative gxm(x, m)(z) of
gx.  Built-in families interact with the measure only through its mean,
which gives them closed-form measure derivatives that are constant in z.

Evaluators accept a measure object or a bare real number standing for the
measure's mean; the latter keeps solver hot paths allocation-free.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError
from .measure import EmpiricalMeasure, GridDensity, mean_of, wasserstein2

__all__ = [
    "CostFamily",
    "LQCost",
    "AnharmonicCost",
    "NullCost",
    "ModelSpec",
    "AssumptionCheck",
    "AssumptionReport",
    "evaluate_terminal_cost",
    "check_assumptions",
    "lifted_derivative_selfcheck",
    "cost_family_from_config",
]


def _sech2(x):
    # 4 e^{-2|x|} / (1 + e^{-2|x|})^2, overflow-free for any x
    e = np.exp(-2.0 * np.abs(x))
    return 4.0 * e / (1.0 + e) ** 2


def _log_cosh(x):
    return np.abs(x) + np.log1p(np.exp(-2.0 * np.abs(x))) - np.log(2.0)


class CostFamily:
    """Interface every terminal cost must implement.

    Subclasses provide g, gx, gxx, gxm and declare the constants their
    assumption checks are measured against (None disables the comparison
    for user extensions).
    """

    #: Lipschitz constant of gx in x, or None if unknown.
    lip_x = None
    #: Lipschitz constant of gx in m (w.r.t. Wasserstein-2), or None.
    lip_m = None
    #: Bound on |gxx|, or None.
    second_bound = None
    #: Lipschitz constant of gxx in x, or None.
    second_lip = None

    def g(self, x, m):
        raise NotImplementedError

    def gx(self, x, m):
        raise NotImplementedError

    def gxx(self, x, m):
        raise NotImplementedError

    def gxm(self, x, m, z):
        """Measure derivative of gx at (x, m), evaluated at z."""
        raise NotImplementedError

    def config(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class LQCost(CostFamily):
    """g(x, m) = q (x - kappa mean(m))^2 / 2."""

    q: float
    kappa: float

    def __post_init__(self):
        if self.q <= 0:
            raise DomainError(f"LQ cost needs q > 0, got {self.q}")

    @property
    def lip_x(self):
        return self.q

    @property
    def lip_m(self):
        return abs(self.q * self.kappa)

    @property
    def second_bound(self):
        return self.q

    @property
    def second_lip(self):
        return 0.0

    def g(self, x, m):
        d = np.asarray(x, dtype=float) - self.kappa * mean_of(m)
        return 0.5 * self.q * d * d

    def gx(self, x, m):
        return self.q * (np.asarray(x, dtype=float) - self.kappa * mean_of(m))

    def gxx(self, x, m):
        return np.full_like(np.asarray(x, dtype=float), self.q)

    def gxm(self, x, m, z):
        # constant in z: the lift of x -> mean(m) has a constant Frechet derivative
        return np.full_like(np.asarray(z, dtype=float), -self.q * self.kappa)

    def config(self):
        return {"family": "lq", "q": self.q, "kappa": self.kappa}


@dataclass(frozen=True)
class AnharmonicCost(CostFamily):
    """gx(x, m) = x + c tanh(x) - kappa mean(m).

    The tanh nonlinearity keeps every derivative bounded and globally
    Lipschitz, and gxx = 1 + c sech^2(x) >= 1 gives a convexity margin
    that dominates the mean coupling whenever kappa <= 1.
    """

    c: float
    kappa: float

    def __post_init__(self):
        if self.c < 0:
            raise DomainError(f"anharmonic cost needs c >= 0, got {self.c}")

    @property
    def lip_x(self):
        return 1.0 + self.c

    @property
    def lip_m(self):
        return abs(self.kappa)

    @property
    def second_bound(self):
        return 1.0 + self.c

    @property
    def second_lip(self):
        # sup |d/dx sech^2| = 4/(3 sqrt 3) ~= 0.7698
        return 0.77 * self.c

    def g(self, x, m):
        x = np.asarray(x, dtype=float)
        return 0.5 * x * x + self.c * _log_cosh(x) - self.kappa * mean_of(m) * x

    def gx(self, x, m):
        x = np.asarray(x, dtype=float)
        return x + self.c * np.tanh(x) - self.kappa * mean_of(m)

    def gxx(self, x, m):
        x = np.asarray(x, dtype=float)
        return 1.0 + self.c * _sech2(x)

    def gxm(self, x, m, z):
        return np.full_like(np.asarray(z, dtype=float), -self.kappa)

    def config(self):
        return {"family": "anharmonic", "c": self.c, "kappa": self.kappa}


@dataclass(frozen=True)
class NullCost(CostFamily):
    """Identically zero terminal cost; the do-nothing control is optimal."""

    lip_x = 0.0
    lip_m = 0.0
    second_bound = 0.0
    second_lip = 0.0

    def g(self, x, m):
        return np.zeros_like(np.asarray(x, dtype=float))

    def gx(self, x, m):
        return np.zeros_like(np.asarray(x, dtype=float))

    def gxx(self, x, m):
        return np.zeros_like(np.asarray(x, dtype=float))

    def gxm(self, x, m, z):
        return np.zeros_like(np.asarray(z, dtype=float))

    def config(self):
        return {"family": "null"}


def cost_family_from_config(cfg: dict) -> CostFamily:
    """Build a cost family from {'family': name, ...params} data."""
    cfg = dict(cfg)
    name = cfg.pop("family", None)
    try:
        if name == "lq":
            return LQCost(**cfg)
        if name == "anharmonic":
            return AnharmonicCost(**cfg)
        if name == "null":
            if cfg:
                raise TypeError(f"unexpected parameters {sorted(cfg)}")
            return NullCost()
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for cost family {name!r}: {exc}")
    raise ConfigurationError(
        f"unknown cost family {name!r}; known: lq, anharmonic, null")


@dataclass(frozen=True)
class ModelSpec:
    """Immutable problem data: noise intensities, horizon, initial law, cost."""

    sigma: float
    eps: float
    horizon: float
    initial_law: GridDensity
    cost: CostFamily

    def __post_init__(self):
        problems = []
        if not self.sigma > 0:
            problems.append(f"sigma must be > 0, got {self.sigma}")
        if self.eps < 0:
            problems.append(f"eps must be >= 0, got {self.eps}")
        if not self.horizon > 0:
            problems.append(f"horizon must be > 0, got {self.horizon}")
        if not isinstance(self.initial_law, GridDensity):
            problems.append("initial_law must be a GridDensity")
        if problems:
            raise ConfigurationError("invalid model: " + "; ".join(problems),
                                     problems=problems)

    def with_eps(self, eps: float) -> "ModelSpec":
        return ModelSpec(self.sigma, eps, self.horizon, self.initial_law, self.cost)


def evaluate_terminal_cost(model: ModelSpec, x, m):
    """g(x, m) for the model's cost family."""
    return model.cost.g(x, m)


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    passed: bool
    worst: float
    witness: dict | None = None

    def as_dict(self):
        return {"name": self.name, "passed": self.passed,
                "worst": self.worst, "witness": self.witness}


@dataclass(frozen=True)
class AssumptionReport:
    """Pass/fail per standing assumption, with worst-case witnesses.

    A failed check always carries a witness describing the probe that
    broke it.
    """

    checks: dict = field(default_factory=dict)

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def __getitem__(self, name) -> AssumptionCheck:
        return self.checks[name]

    def to_json(self) -> str:
        return json.dumps({k: v.as_dict() for k, v in self.checks.items()},
                          indent=2, sort_keys=True)


def _probe_points(model, rng, n):
    lo, hi = model.initial_law.xmin, model.initial_law.xmax
    pad = 0.2 * (hi - lo)
    return rng.uniform(lo - pad, hi + pad, size=n)


def _probe_measures(model, rng, n):
    out = []
    for _ in range(n):
        k = int(rng.integers(1, 7))
        out.append(EmpiricalMeasure(_probe_points(model, rng, k)))
    return out


def check_assumptions(model: ModelSpec, n_probes: int = 400,
                      rng_stream=0) -> AssumptionReport:
    """Monte-Carlo probe of the standing assumptions.

    Checks, against the family's declared constants where they exist:
    a1 Lipschitz continuity of gx in x; a2 pointwise convexity gxx >= 0;
    a3 Lipschitz continuity of gx in the measure (Wasserstein-2);
    a4 weak monotonicity in the coupled form
    E[(gx(xi, law xi) - gx(xi', law xi'))(xi - xi')] >= -1e-10, probed on
    random couplings plus the deterministic-shift coupling that is the
    canonical violator for mean interactions; a5 boundedness and x-Lipschitz
    continuity of the second derivatives.

    Returns a report, never raises on failure.
    """
    if n_probes < 100:
        raise ConfigurationError(f"need n_probes >= 100, got {n_probes}")
    rng = np.random.default_rng(rng_stream)
    cost = model.cost
    checks = {}

    n_pair = n_probes
    xs = _probe_points(model, rng, n_pair)
    xs2 = _probe_points(model, rng, n_pair)
    measures = _probe_measures(model, rng, max(8, n_probes // 16))

    # a1: |gx(x,m) - gx(x',m)| <= L |x - x'|
    worst_ratio, witness = 0.0, None
    for m in measures[:6]:
        dx = np.abs(xs - xs2)
        ok = dx > 1e-9
        dg = np.abs(np.asarray(cost.gx(xs, m)) - np.asarray(cost.gx(xs2, m)))
        ratios = dg[ok] / dx[ok]
        if ratios.size:
            i = int(np.argmax(ratios))
            if ratios[i] > worst_ratio:
                worst_ratio = float(ratios[i])
                witness = {"x": float(xs[ok][i]), "x2": float(xs2[ok][i]),
                           "ratio": float(ratios[i])}
    if cost.lip_x is None:
        checks["a1_lipschitz_x"] = AssumptionCheck("a1_lipschitz_x", True,
                                                   worst_ratio, None)
    else:
        ok = worst_ratio <= cost.lip_x + 1e-9
        checks["a1_lipschitz_x"] = AssumptionCheck(
            "a1_lipschitz_x", ok, worst_ratio, None if ok else witness)

    # a2: convexity gxx >= 0 everywhere sampled
    worst, witness = np.inf, None
    for m in measures[:6]:
        vals = np.asarray(cost.gxx(xs, m))
        i = int(np.argmin(vals))
        if vals[i] < worst:
            worst, witness = float(vals[i]), {"x": float(xs[i]), "gxx": float(vals[i])}
    ok = worst >= 0.0
    checks["a2_convexity"] = AssumptionCheck("a2_convexity", ok, worst,
                                             None if ok else witness)

    # a3: |gx(x,m) - gx(x,m')| <= L_m W2(m, m')
    worst_ratio, witness = 0.0, None
    for i in range(len(measures) - 1):
        m1, m2 = measures[i], measures[i + 1]
        d = wasserstein2(m1, m2)
        if d < 1e-9:
            continue
        x = float(xs[i % n_pair])
        num = abs(float(cost.gx(x, m1)) - float(cost.gx(x, m2)))
        if num / d > worst_ratio:
            worst_ratio = num / d
            witness = {"x": x, "w2": d, "ratio": num / d}
    if cost.lip_m is None:
        checks["a3_lipschitz_m"] = AssumptionCheck("a3_lipschitz_m", True,
                                                   worst_ratio, None)
    else:
        ok = worst_ratio <= cost.lip_m + 1e-9
        checks["a3_lipschitz_m"] = AssumptionCheck(
            "a3_lipschitz_m", ok, worst_ratio, None if ok else witness)

    # a4: coupled weak monotonicity
    worst, witness = np.inf, None
    n_coupled = max(8, n_probes // 8)
    for trial in range(n_coupled):
        k = int(rng.integers(2, 33))
        xi = rng.normal(rng.uniform(-1, 1), 1.0 + rng.random(), size=k)
        kind = trial % 3
        if kind == 0:
            delta = rng.uniform(0.1, 2.0) * (1 if rng.random() < 0.5 else -1)
            xi2 = xi + delta
            desc = {"coupling": "shift", "delta": float(delta)}
        elif kind == 1:
            xi2 = xi + rng.normal(0, 0.5, size=k)
            desc = {"coupling": "perturb"}
        else:
            xi2 = rng.normal(rng.uniform(-1, 1), 1.0 + rng.random(), size=k)
            desc = {"coupling": "independent"}
        m1, m2 = EmpiricalMeasure(xi), EmpiricalMeasure(xi2)
        val = float(np.mean((np.asarray(cost.gx(xi, m1))
                             - np.asarray(cost.gx(xi2, m2))) * (xi - xi2)))
        if val < worst:
            worst = val
            witness = dict(desc, value=val)
    # canonical deterministic-shift probe, always included
    xi = rng.normal(0.0, 1.0, size=16)
    for delta in (1.0, -1.0):
        xi2 = xi + delta
        val = float(np.mean((np.asarray(cost.gx(xi, EmpiricalMeasure(xi)))
                             - np.asarray(cost.gx(xi2, EmpiricalMeasure(xi2))))
                            * (xi - xi2)))
        if val < worst:
            worst = val
            witness = {"coupling": "shift", "delta": float(delta), "value": val}
    ok = worst >= -1e-10
    checks["a4_weak_monotonicity"] = AssumptionCheck(
        "a4_weak_monotonicity", ok, worst, None if ok else witness)

    # a5: bounded second derivatives, Lipschitz in x
    m0 = measures[0]
    gxx_vals = np.asarray(cost.gxx(xs, m0))
    worst_bound = float(np.max(np.abs(gxx_vals)))
    worst_gxm = float(np.max(np.abs(np.asarray(cost.gxm(0.0, m0, xs)))))
    dx = np.abs(xs - xs2)
    okm = dx > 1e-9
    lip2 = np.abs(gxx_vals - np.asarray(cost.gxx(xs2, m0)))[okm] / dx[okm]
    worst_lip = float(np.max(lip2)) if lip2.size else 0.0
    passed = True
    witness = None
    if cost.second_bound is not None and worst_bound > cost.second_bound + 1e-9:
        passed = False
        witness = {"kind": "bound", "observed": worst_bound}
    if cost.lip_m is not None and worst_gxm > cost.lip_m + 1e-9:
        passed = False
        witness = {"kind": "measure_derivative_bound", "observed": worst_gxm}
    if cost.second_lip is not None and worst_lip > cost.second_lip + 1e-9:
        passed = False
        witness = {"kind": "lipschitz", "observed": worst_lip}
    checks["a5_second_derivatives"] = AssumptionCheck(
        "a5_second_derivatives", passed, max(worst_bound, worst_lip), witness)

    return AssumptionReport(checks)


def lifted_derivative_selfcheck(model: ModelSpec, x: float,
                                m: EmpiricalMeasure, direction,
                                delta: float = 1e-5):
    """Analytic measure derivative vs a finite difference along a direction.

    analytic = mean_j gxm(x, m)(z_j) dir_j;
    finite difference = [gx(x, m with atoms shifted by delta*dir) - gx(x, m)] / delta.

    Returns (analytic, finite_difference).
    """
    direction = np.asarray(direction, dtype=float)
    if direction.shape != m.atoms.shape:
        raise ConfigurationError(
            f"direction shape {direction.shape} != atoms shape {m.atoms.shape}")
    analytic = float(np.mean(np.asarray(model.cost.gxm(x, m, m.atoms)) * direction))
    shifted = EmpiricalMeasure(m.atoms + delta * direction)
    fd = (float(model.cost.gx(x, shifted)) - float(model.cost.gx(x, m))) / delta
    return analytic, fd
