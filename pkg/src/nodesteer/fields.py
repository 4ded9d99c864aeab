"""Evaluable time-varying vector fields.

Field objects share one calling convention: ``velocity(t, X)`` maps a time and
an (n, d) array of positions to an (n, d) array of velocities. The concrete
kinds are

* :class:`NeuralField` -- a finite superposition sum_i A_i Sigma(W_i x + theta_i),
  time-independent, the class of admissible right-hand sides,
* :class:`VectorFieldSpec` -- an arbitrary evaluator with declared sup-norm and
  Lipschitz bounds over a region, validated against sampled estimates,
* :class:`PiecewiseConstField` -- static pieces on consecutive time windows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

from .measures import Region


class BoundDeclarationError(ValueError):
    """Declared C or K fell below the sampled empirical estimate."""


# 5% grace between sampled estimates (lower bounds) and declared constants,
# plus an absolute floor so float-level noise cannot fail a zero declaration.
DECLARED_BOUND_SLACK = 0.05
DECLARED_BOUND_ATOL = 1e-9


def _logistic(x):
    return 1.0 / (1.0 + np.exp(-x))


def _relu(x):
    return np.maximum(x, 0.0)


_ACTIVATIONS = {
    "logistic": (_logistic, 0.25),
    "relu": (_relu, 1.0),
    "tanh": (np.tanh, 1.0),
}


@dataclass(frozen=True)
class Activation:
    """Componentwise scalar activation with its global Lipschitz constant."""

    kind: str

    def __post_init__(self):
        if self.kind not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.kind!r}; choose from {sorted(_ACTIVATIONS)}")

    @property
    def lipschitz(self) -> float:
        return _ACTIVATIONS[self.kind][1]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return _ACTIVATIONS[self.kind][0](np.asarray(x, dtype=float))


@dataclass(frozen=True)
class NeuralTerm:
    """One superposition term (A, W, theta) with A, W in R^{d x d}, theta in R^d."""

    A: np.ndarray
    W: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        W = np.asarray(self.W, dtype=float)
        theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        d = theta.size
        if A.shape != (d, d) or W.shape != (d, d):
            raise ValueError(f"A and W must be {d}x{d} to match theta in R^{d}")
        for arr in (A, W, theta):
            if not np.all(np.isfinite(arr)):
                raise ValueError("term entries must be finite")
        A, W, theta = A.copy(), W.copy(), theta.copy()
        for arr in (A, W, theta):
            arr.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "theta", theta)

    @property
    def dim(self) -> int:
        return self.theta.size

    def scaled(self, gain: float) -> "NeuralTerm":
        return NeuralTerm(self.A * gain, self.W, self.theta)

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "W": self.W.tolist(), "theta": self.theta.tolist()}

    @staticmethod
    def from_dict(d: Mapping) -> "NeuralTerm":
        return NeuralTerm(np.asarray(d["A"]), np.asarray(d["W"]), np.asarray(d["theta"]))


@dataclass(frozen=True)
class NeuralField:
    """Finite superposition sum_i A_i Sigma(W_i x + theta_i).

    m = 0 terms denotes the zero field. Evaluation is time-independent.
    """

    terms: tuple
    activation: Activation
    dim: int = 0

    def __post_init__(self):
        terms = tuple(self.terms)
        object.__setattr__(self, "terms", terms)
        if terms:
            d = terms[0].dim
            if any(t.dim != d for t in terms):
                raise ValueError("all terms must share one dimension")
            object.__setattr__(self, "dim", d)
        elif self.dim < 1:
            raise ValueError("zero field (m = 0) needs an explicit dim >= 1")

    @property
    def width(self) -> int:
        return len(self.terms)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        pts = np.asarray(x, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if pts.shape[1] != self.dim:
            raise ValueError(f"points are {pts.shape[1]}-dimensional, field is {self.dim}")
        out = np.zeros_like(pts)
        for term in self.terms:
            out += self.activation(pts @ term.W.T + term.theta) @ term.A.T
        return out[0] if single else out

    def velocity(self, t: float, x: np.ndarray) -> np.ndarray:
        return self(x)

    def lipschitz_bound(self) -> float:
        """sum_i ||A_i||_2 ||W_i||_2 K_sigma, a global Lipschitz constant."""
        k = self.activation.lipschitz
        return float(
            sum(
                np.linalg.norm(t.A, 2) * np.linalg.norm(t.W, 2) * k for t in self.terms
            )
        )

    def gain_total(self) -> float:
        """sum_i ||A_i||_2; with a [0,1]-valued activation, |field| <= sqrt(d) * this."""
        return float(sum(np.linalg.norm(t.A, 2) for t in self.terms))

    def to_json_dict(self) -> dict:
        return {
            "activation": self.activation.kind,
            "dim": self.dim,
            "terms": [t.to_dict() for t in self.terms],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    @staticmethod
    def from_json_dict(d: Mapping) -> "NeuralField":
        terms = tuple(NeuralTerm.from_dict(t) for t in d["terms"])
        return NeuralField(terms, Activation(d["activation"]), dim=int(d.get("dim", 0)))

    @staticmethod
    def from_json(text: str) -> "NeuralField":
        return NeuralField.from_json_dict(json.loads(text))


def zero_field(dim: int, activation: str = "logistic") -> NeuralField:
    return NeuralField((), Activation(activation), dim=dim)


class PiecewiseConstField:
    """Static fields on consecutive windows; piece j governs [t_j, t_{j+1}).

    Evaluation is right-continuous in t; t = T uses the last piece. Pieces are
    maps x -> velocity (a callable on (n, d) arrays, or a NeuralField).
    """

    def __init__(self, breakpoints: Sequence[float], pieces: Sequence):
        bp = np.asarray(breakpoints, dtype=float)
        if bp.ndim != 1 or bp.size < 2 or not np.all(np.diff(bp) > 0):
            raise ValueError("breakpoints must be strictly increasing with >= 2 entries")
        if len(pieces) != bp.size - 1:
            raise ValueError(f"{bp.size - 1} windows but {len(pieces)} pieces")
        bp = bp.copy()
        bp.setflags(write=False)
        self.breakpoints = bp
        self.pieces = list(pieces)

    @property
    def horizon(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def start(self) -> float:
        return float(self.breakpoints[0])

    def piece_index(self, t: float) -> int:
        if t < self.breakpoints[0] or t > self.breakpoints[-1]:
            raise ValueError(f"t = {t} outside [{self.breakpoints[0]}, {self.breakpoints[-1]}]")
        j = int(np.searchsorted(self.breakpoints, t, side="right")) - 1
        return min(max(j, 0), len(self.pieces) - 1)

    def static_piece(self, j: int) -> Callable[[np.ndarray], np.ndarray]:
        piece = self.pieces[j]
        if isinstance(piece, NeuralField):
            return piece
        return piece

    def velocity(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.static_piece(self.piece_index(t))(x)


@dataclass(frozen=True)
class BoundEstimate:
    C_hat: float
    K_hat: float


def estimate_bounds(
    vf,
    region: Region,
    t_samples: int = 8,
    x_samples: int = 128,
    seed: int = 0,
) -> BoundEstimate:
    """Sampled lower bounds on the sup norm C and Lipschitz constant K.

    Evaluates the field at ``t_samples`` times spanning [0, T] and ``x_samples``
    points drawn uniformly from the region; C_hat is the largest speed seen and
    K_hat the largest pairwise difference quotient.
    """
    if t_samples < 2 or x_samples < 2:
        raise ValueError("estimate_bounds needs at least 2 samples per axis")
    horizon = getattr(vf, "horizon_T", None)
    if horizon is None:
        horizon = getattr(vf, "horizon", 1.0)
    rng = np.random.default_rng(seed)
    pts = region.sample(rng, x_samples)
    dists = squareform(pdist(pts))
    np.fill_diagonal(dists, np.inf)
    dists[dists == 0.0] = np.inf
    c_hat = 0.0
    k_hat = 0.0
    for t in np.linspace(0.0, horizon, t_samples):
        vel = vf.velocity(float(t), pts)
        c_hat = max(c_hat, float(np.max(np.linalg.norm(vel, axis=1))))
        vel_diff = squareform(pdist(vel))
        k_hat = max(k_hat, float(np.max(vel_diff / dists)))
    return BoundEstimate(c_hat, k_hat)


class VectorFieldSpec:
    """A time-varying field with declared bound C and Lipschitz constant K.

    The declarations are trusted inputs downstream (support growth, window
    sizing), so construction cross-checks them against sampled estimates over
    the declared region and rejects declarations the samples exceed by more
    than 5%.
    """

    def __init__(
        self,
        evaluator: Callable[[float, np.ndarray], np.ndarray],
        bound_C: float,
        lipschitz_K: float,
        horizon_T: float,
        dim: int,
        region: Region,
        name: Optional[str] = None,
        params: Optional[dict] = None,
        analytic_flow: Optional[Callable[[float, np.ndarray], np.ndarray]] = None,
        static_superposition: Optional[NeuralField] = None,
        validate: bool = True,
    ):
        if horizon_T <= 0:
            raise ValueError("horizon_T must be positive")
        if bound_C < 0 or lipschitz_K < 0:
            raise ValueError("declared C and K must be nonnegative")
        self._evaluator = evaluator
        self.bound_C = float(bound_C)
        self.lipschitz_K = float(lipschitz_K)
        self.horizon_T = float(horizon_T)
        self.dim = int(dim)
        self.region = region
        self.name = name
        self.params = dict(params) if params else {}
        self.analytic_flow = analytic_flow
        # set when the evaluator is a time-independent superposition, so
        # downstream averaging/fitting can exploit admissibility exactly
        self.static_superposition = static_superposition
        if validate:
            est = estimate_bounds(self, region, t_samples=5, x_samples=64, seed=0)
            if est.C_hat > self.bound_C * (1.0 + DECLARED_BOUND_SLACK) + DECLARED_BOUND_ATOL:
                raise BoundDeclarationError(
                    f"declared C = {self.bound_C} but sampled C_hat = {est.C_hat:.6g}"
                )
            if est.K_hat > self.lipschitz_K * (1.0 + DECLARED_BOUND_SLACK) + DECLARED_BOUND_ATOL:
                raise BoundDeclarationError(
                    f"declared K = {self.lipschitz_K} but sampled K_hat = {est.K_hat:.6g}"
                )

    def velocity(self, t: float, x: np.ndarray) -> np.ndarray:
        return self._evaluator(t, np.atleast_2d(np.asarray(x, dtype=float)))

    def to_json_dict(self) -> dict:
        if self.name is None:
            raise ValueError("only named (benchmark) fields serialize by {name, params}")
        return {"name": self.name, "params": self.params}


def eval_field(vf, t: float, x) -> np.ndarray:
    """Evaluate any field object at (t, x); x may be a single d-vector.

    Enforces 0 <= t <= T for fields carrying a horizon and checks the spatial
    dimension where the field declares one.
    """
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    horizon = getattr(vf, "horizon_T", None)
    if horizon is None:
        horizon = getattr(vf, "horizon", None)
    start = getattr(vf, "start", 0.0)
    if horizon is not None and not (start <= t <= horizon):
        raise ValueError(f"t = {t} outside [{start}, {horizon}]")
    dim = getattr(vf, "dim", None)
    if dim and pts.shape[1] != dim:
        raise ValueError(f"points are {pts.shape[1]}-dimensional, field is {dim}")
    vel = vf.velocity(float(t), pts)
    return vel[0] if single else vel


# -- analytic benchmark fields -------------------------------------------------


def _rotation_spec(params: Mapping) -> VectorFieldSpec:
    omega = float(params["omega"])
    radius = float(params.get("radius", 2.0))
    horizon = float(params.get("horizon", 1.0))
    region = Region("ball", np.zeros(2), np.array([radius]))

    def evaluator(t, x):
        return omega * np.stack([-x[:, 1], x[:, 0]], axis=1)

    def flow(t, x):
        c, s = np.cos(omega * t), np.sin(omega * t)
        rot = np.array([[c, -s], [s, c]])
        return x @ rot.T

    return VectorFieldSpec(
        evaluator,
        bound_C=abs(omega) * radius,
        lipschitz_K=abs(omega),
        horizon_T=horizon,
        dim=2,
        region=region,
        name="rotation",
        params={"omega": omega, "radius": radius, "horizon": horizon},
        analytic_flow=flow,
    )


def _translation_spec(params: Mapping) -> VectorFieldSpec:
    v = np.atleast_1d(np.asarray(params["velocity"], dtype=float))
    radius = float(params.get("radius", 2.0))
    horizon = float(params.get("horizon", 1.0))
    region = Region("ball", np.zeros(v.size), np.array([radius]))

    def evaluator(t, x):
        return np.broadcast_to(v, x.shape).copy()

    def flow(t, x):
        return x + t * v

    return VectorFieldSpec(
        evaluator,
        bound_C=float(np.linalg.norm(v)),
        lipschitz_K=0.0,
        horizon_T=horizon,
        dim=v.size,
        region=region,
        name="translation",
        params={"velocity": v.tolist(), "radius": radius, "horizon": horizon},
        analytic_flow=flow,
    )


def _contraction_spec(params: Mapping) -> VectorFieldSpec:
    rate = float(params.get("rate", 1.0))
    if rate <= 0:
        raise ValueError("contraction rate must be positive")
    center = np.atleast_1d(np.asarray(params.get("center", [0.0, 0.0]), dtype=float))
    radius = float(params.get("radius", 2.0))
    horizon = float(params.get("horizon", 1.0))
    region = Region("ball", center, np.array([radius]))

    def evaluator(t, x):
        return -rate * (x - center)

    def flow(t, x):
        return center + (x - center) * np.exp(-rate * t)

    return VectorFieldSpec(
        evaluator,
        bound_C=rate * radius,
        lipschitz_K=rate,
        horizon_T=horizon,
        dim=center.size,
        region=region,
        name="contraction-to-point",
        params={"rate": rate, "center": center.tolist(), "radius": radius, "horizon": horizon},
        analytic_flow=flow,
    )


def _shear_spec(params: Mapping) -> VectorFieldSpec:
    rate = float(params.get("rate", 1.0))
    radius = float(params.get("radius", 2.0))
    horizon = float(params.get("horizon", 1.0))
    region = Region("ball", np.zeros(2), np.array([radius]))

    def evaluator(t, x):
        out = np.zeros_like(x)
        out[:, 0] = rate * x[:, 1]
        return out

    def flow(t, x):
        out = np.array(x, dtype=float)
        out[:, 0] = out[:, 0] + t * rate * x[:, 1]
        return out

    return VectorFieldSpec(
        evaluator,
        bound_C=abs(rate) * radius,
        lipschitz_K=abs(rate),
        horizon_T=horizon,
        dim=2,
        region=region,
        name="shear",
        params={"rate": rate, "radius": radius, "horizon": horizon},
        analytic_flow=flow,
    )


def _neural_static_spec(params: Mapping) -> VectorFieldSpec:
    nf = NeuralField(
        tuple(NeuralTerm.from_dict(t) for t in params["terms"]),
        Activation(params.get("activation", "logistic")),
    )
    radius = float(params.get("radius", 2.0))
    horizon = float(params.get("horizon", 1.0))
    region = Region("ball", np.zeros(nf.dim), np.array([radius]))
    # C declared from a dense sampled estimate with headroom; over-declaring
    # is safe (it only enlarges downstream fitting regions), while an
    # understatement would be rejected by construction-time validation
    est = estimate_bounds(nf, region, t_samples=2, x_samples=256, seed=0)
    return VectorFieldSpec(
        nf.velocity,
        bound_C=est.C_hat * 1.25 + 1e-9,
        lipschitz_K=nf.lipschitz_bound(),
        horizon_T=horizon,
        dim=nf.dim,
        region=region,
        name="neural-static",
        params={
            "terms": [t.to_dict() for t in nf.terms],
            "activation": nf.activation.kind,
            "radius": radius,
            "horizon": horizon,
        },
        analytic_flow=None,
        static_superposition=nf,
    )


def _double_gyre_spec(params: Mapping) -> VectorFieldSpec:
    amplitude = float(params.get("amplitude", 0.1))
    horizon = float(params.get("horizon", 1.0))
    # classic two-cell stream pattern on [0, 2] x [0, 1]
    region = Region("box", np.array([1.0, 0.5]), np.array([1.0, 0.5]))
    pi_a = np.pi * amplitude

    def evaluator(t, x):
        sx, cx = np.sin(np.pi * x[:, 0]), np.cos(np.pi * x[:, 0])
        sy, cy = np.sin(np.pi * x[:, 1]), np.cos(np.pi * x[:, 1])
        return pi_a * np.stack([-sx * cy, cx * sy], axis=1)

    return VectorFieldSpec(
        evaluator,
        bound_C=pi_a,
        lipschitz_K=2.0 * np.pi * pi_a,
        horizon_T=horizon,
        dim=2,
        region=region,
        name="double-gyre-static",
        params={"amplitude": amplitude, "horizon": horizon},
        analytic_flow=None,
    )


_BENCHMARKS = {
    "rotation": _rotation_spec,
    "translation": _translation_spec,
    "contraction-to-point": _contraction_spec,
    "shear": _shear_spec,
    "double-gyre-static": _double_gyre_spec,
    "neural-static": _neural_static_spec,
}


def benchmark_field(name: str, params: Optional[Mapping] = None) -> VectorFieldSpec:
    """Named analytic field with exact declared C, K on its declared region."""
    if name not in _BENCHMARKS:
        raise ValueError(f"unknown benchmark field {name!r}; choose from {sorted(_BENCHMARKS)}")
    try:
        return _BENCHMARKS[name](params or {})
    except KeyError as exc:
        raise ValueError(f"benchmark {name!r} missing required parameter {exc}") from exc
