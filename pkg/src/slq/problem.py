"""Problem containers: time grid, matrix-valued coefficient paths, problem data.

A problem instance is the controlled linear SDE

    dX = (A X + B u + b) ds + (C X + D u + sigma) dW,     X(t0) = x,

driven by a single scalar Brownian motion, together with the quadratic cost

    J = E[ <G X(T), X(T)> + 2 <g, X(T)>
           + integral of <Q X, X> + 2 <S X, u> + <R u, u> + 2 <q, X> + 2 <rho, u> ].

All coefficients are deterministic functions of time, represented as
:class:`MatrixPath` (constant, polynomial-in-time, or sampled-with-linear-
interpolation). The JSON on-disk schema is documented in the README.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import (
    DimensionError,
    NonSymmetricWeight,
    ParseError,
    UnsupportedStochasticData,
)

SYMMETRY_TOL = 1e-9
PSD_TOL = 1e-9

# Default node density when a problem file omits horizon.n_steps.
DEFAULT_STEPS_PER_UNIT_TIME = 2000


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [t0, T] with n_steps intervals (n_steps + 1 nodes)."""

    t0: float
    T: float
    n_steps: int

    def __post_init__(self) -> None:
        if not (math.isfinite(self.t0) and math.isfinite(self.T)):
            raise ParseError("grid endpoints must be finite")
        if not self.t0 < self.T:
            raise ParseError(f"need t0 < T, got t0={self.t0}, T={self.T}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 2:
            raise ParseError(f"n_steps must be an integer >= 2, got {self.n_steps}")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def h(self) -> float:
        return (self.T - self.t0) / self.n_steps

    def times(self) -> np.ndarray:
        return np.linspace(self.t0, self.T, self.n_steps + 1)

    def half_times(self) -> np.ndarray:
        """Nodes plus interval midpoints: the RK4 stage times."""
        return np.linspace(self.t0, self.T, 2 * self.n_steps + 1)

    def refined(self, factor: int) -> "TimeGrid":
        if int(factor) != factor or factor < 1:
            raise ValueError(f"refinement factor must be a positive integer, got {factor}")
        return TimeGrid(self.t0, self.T, self.n_steps * int(factor))

    def nearest_node(self, t: float) -> int:
        """Index of the grid node closest to t. t must lie inside [t0, T]."""
        if t < self.t0 - 1e-9 or t > self.T + 1e-9:
            raise ValueError(f"time {t} outside [{self.t0}, {self.T}]")
        k = int(round((t - self.t0) / self.h))
        return min(max(k, 0), self.n_steps)


class MatrixPath:
    """Matrix-valued function of time, one of three representations.

    const    fixed matrix
    poly     per-entry polynomial in s, coefficients in ascending order
    samples  linear interpolation between sampled matrices (clamped outside)

    A path constructed with ``symmetric=True`` must be square; asymmetry above
    ``SYMMETRY_TOL`` in the stored data raises :class:`NonSymmetricWeight`, and
    evaluation always returns the symmetrized (M + M')/2.
    """

    def __init__(self, rows: int, cols: int, kind: str, data: Any, *, symmetric: bool = False):
        self.rows = rows
        self.cols = cols
        self.kind = kind
        self.symmetric = symmetric
        if symmetric and rows != cols:
            raise DimensionError(f"symmetric path must be square, got {rows}x{cols}")
        if kind == "const":
            self._matrix = np.asarray(data, dtype=float)
            self._check_shape(self._matrix)
            self._check_symmetry(self._matrix[None])
        elif kind == "poly":
            # data: nested lists, entry (i, j) is a coefficient list; kept
            # verbatim for serialization, padded to a common degree for eval.
            self._raw_coeffs = data
            self._coeffs = self._pad_coeffs(data)
            self._check_symmetry(np.moveaxis(self._coeffs, -1, 0))
        elif kind == "samples":
            times = np.asarray(data["times"], dtype=float)
            values = np.asarray(data["values"], dtype=float)
            if times.ndim != 1 or len(times) < 2:
                raise ParseError("sampled path needs at least two sample times")
            if np.any(np.diff(times) <= 0):
                raise ParseError("sample times must be strictly increasing")
            if values.shape != (len(times), rows, cols):
                raise DimensionError(
                    f"sampled values have shape {values.shape}, "
                    f"expected {(len(times), rows, cols)}"
                )
            self._times = times
            self._values = values
            self._check_symmetry(values)
        else:
            raise ParseError(f"unknown path kind {kind!r}")

    # -- constructors -------------------------------------------------------

    @classmethod
    def const(cls, matrix: Any, *, symmetric: bool = False) -> "MatrixPath":
        m = np.atleast_2d(np.asarray(matrix, dtype=float))
        return cls(m.shape[0], m.shape[1], "const", m, symmetric=symmetric)

    @classmethod
    def poly(cls, coeffs: Any, *, symmetric: bool = False) -> "MatrixPath":
        rows = len(coeffs)
        cols = len(coeffs[0]) if rows else 0
        return cls(rows, cols, "poly", coeffs, symmetric=symmetric)

    @classmethod
    def sampled(cls, times: Any, values: Any, *, symmetric: bool = False) -> "MatrixPath":
        values = np.asarray(values, dtype=float)
        return cls(
            values.shape[1],
            values.shape[2],
            "samples",
            {"times": times, "values": values},
            symmetric=symmetric,
        )

    @classmethod
    def zeros(cls, rows: int, cols: int, *, symmetric: bool = False) -> "MatrixPath":
        return cls.const(np.zeros((rows, cols)), symmetric=symmetric)

    # -- validation helpers -------------------------------------------------

    def _check_shape(self, m: np.ndarray) -> None:
        if m.shape != (self.rows, self.cols):
            raise DimensionError(f"expected shape {(self.rows, self.cols)}, got {m.shape}")

    def _pad_coeffs(self, data: Any) -> np.ndarray:
        if len(data) != self.rows or any(len(row) != self.cols for row in data):
            raise DimensionError(
                f"polynomial path entries do not form a {self.rows}x{self.cols} grid"
            )
        deg = 0
        for row in data:
            for entry in row:
                if not isinstance(entry, (list, tuple)) or len(entry) == 0:
                    raise ParseError("each polynomial entry must be a non-empty coefficient list")
                deg = max(deg, len(entry))
        out = np.zeros((self.rows, self.cols, deg))
        for i, row in enumerate(data):
            for j, entry in enumerate(row):
                out[i, j, : len(entry)] = entry
        return out

    def _check_symmetry(self, stack: np.ndarray) -> None:
        if not self.symmetric:
            return
        asym = np.max(np.abs(stack - stack.transpose(0, 2, 1)))
        if asym > SYMMETRY_TOL:
            raise NonSymmetricWeight(
                f"matrix declared symmetric has asymmetry {asym:.3e} > {SYMMETRY_TOL}"
            )

    # -- evaluation ---------------------------------------------------------

    def at(self, s: float) -> np.ndarray:
        return self.sample(np.asarray([s]))[0]

    def sample(self, times: np.ndarray) -> np.ndarray:
        """Evaluate at an array of times; returns shape (len(times), rows, cols)."""
        times = np.asarray(times, dtype=float)
        if self.kind == "const":
            out = np.broadcast_to(self._matrix, (len(times), self.rows, self.cols)).copy()
        elif self.kind == "poly":
            # coefficient axis first, trailing dims broadcast against times
            c = np.moveaxis(self._coeffs, -1, 0)
            out = np.moveaxis(np.polynomial.polynomial.polyval(times, c), -1, 0)
        else:
            out = np.empty((len(times), self.rows, self.cols))
            for i in range(self.rows):
                for j in range(self.cols):
                    out[:, i, j] = np.interp(times, self._times, self._values[:, i, j])
        if self.symmetric:
            out = (out + out.transpose(0, 2, 1)) / 2.0
        return out

    def is_zero(self) -> bool:
        if self.kind == "const":
            return not np.any(self._matrix)
        if self.kind == "poly":
            return not np.any(self._coeffs)
        return not np.any(self._values)

    def plus_scaled_identity(self, shift: float) -> "MatrixPath":
        """The path s -> M(s) + shift * I. Requires a square path."""
        if self.rows != self.cols:
            raise DimensionError("identity shift needs a square path")
        eye = np.eye(self.rows)
        if self.kind == "const":
            return MatrixPath.const(self._matrix + shift * eye, symmetric=self.symmetric)
        if self.kind == "poly":
            c = self._coeffs.copy()
            c[:, :, 0] += shift * eye
            raw = [[list(c[i, j]) for j in range(self.cols)] for i in range(self.rows)]
            return MatrixPath.poly(raw, symmetric=self.symmetric)
        return MatrixPath.sampled(
            self._times, self._values + shift * eye, symmetric=self.symmetric
        )

    # -- serialization ------------------------------------------------------

    def to_json(self) -> dict:
        if self.kind == "const":
            return {"const": self._matrix.tolist()}
        if self.kind == "poly":
            return {"poly": self._raw_coeffs}
        return {
            "samples": {"times": self._times.tolist(), "values": self._values.tolist()}
        }

    @classmethod
    def from_json(
        cls, obj: Any, rows: int, cols: int, *, symmetric: bool = False, name: str = "path"
    ) -> "MatrixPath":
        if isinstance(obj, list):
            obj = {"const": obj}
        if not isinstance(obj, dict) or len(obj) != 1:
            raise ParseError(
                f"{name}: expected a matrix or one of const/poly/samples, got {type(obj).__name__}"
            )
        ((kind, data),) = obj.items()
        if kind not in ("const", "poly", "samples"):
            raise ParseError(f"{name}: unknown path kind {kind!r}")
        try:
            path = cls(rows, cols, kind, data, symmetric=symmetric)
        except (DimensionError, NonSymmetricWeight, ParseError) as exc:
            raise type(exc)(f"{name}: {exc}") from None
        return path

    def __repr__(self) -> str:
        sym = ", symmetric" if self.symmetric else ""
        return f"MatrixPath({self.rows}x{self.cols}, {self.kind}{sym})"


@dataclass
class ProblemData:
    """Validated problem instance on its time grid.

    Coefficient shapes: A, C are (n, n); B, D are (n, m); b, sigma are (n, 1)
    paths. Weights: G constant symmetric (n, n); Q symmetric (n, n) path;
    S (m, n) path; R symmetric (m, m) path; g constant (n, 1); q (n, 1) and
    rho (m, 1) paths.
    """

    grid: TimeGrid
    n: int
    m: int
    A: MatrixPath
    B: MatrixPath
    C: MatrixPath
    D: MatrixPath
    b: MatrixPath
    sigma: MatrixPath
    G: np.ndarray
    Q: MatrixPath
    S: MatrixPath
    R: MatrixPath
    g: np.ndarray
    q: MatrixPath
    rho: MatrixPath

    def __post_init__(self) -> None:
        if self.n < 1 or self.m < 1:
            raise DimensionError(f"need n >= 1 and m >= 1, got n={self.n}, m={self.m}")
        expected = {
            "A": (self.A, self.n, self.n),
            "B": (self.B, self.n, self.m),
            "C": (self.C, self.n, self.n),
            "D": (self.D, self.n, self.m),
            "b": (self.b, self.n, 1),
            "sigma": (self.sigma, self.n, 1),
            "Q": (self.Q, self.n, self.n),
            "S": (self.S, self.m, self.n),
            "R": (self.R, self.m, self.m),
            "q": (self.q, self.n, 1),
            "rho": (self.rho, self.m, 1),
        }
        for label, (path, r, c) in expected.items():
            if (path.rows, path.cols) != (r, c):
                raise DimensionError(
                    f"{label}: expected {r}x{c}, got {path.rows}x{path.cols}"
                )
        self.G = np.asarray(self.G, dtype=float)
        self.g = np.asarray(self.g, dtype=float).reshape(self.n, 1)
        if self.G.shape != (self.n, self.n):
            raise DimensionError(f"G: expected {self.n}x{self.n}, got {self.G.shape}")
        asym = np.max(np.abs(self.G - self.G.T))
        if asym > SYMMETRY_TOL:
            raise NonSymmetricWeight(f"G has asymmetry {asym:.3e} > {SYMMETRY_TOL}")
        self.G = (self.G + self.G.T) / 2.0

    # -- structure queries --------------------------------------------------

    def homogeneous(self) -> bool:
        """True when all affine terms (b, sigma, g, q, rho) vanish."""
        return (
            self.b.is_zero()
            and self.sigma.is_zero()
            and not np.any(self.g)
            and self.q.is_zero()
            and self.rho.is_zero()
        )

    def homogeneous_part(self) -> "ProblemData":
        """The same problem with every affine term zeroed."""
        if self.homogeneous():
            return self
        return dataclasses.replace(
            self,
            b=MatrixPath.zeros(self.n, 1),
            sigma=MatrixPath.zeros(self.n, 1),
            g=np.zeros((self.n, 1)),
            q=MatrixPath.zeros(self.n, 1),
            rho=MatrixPath.zeros(self.m, 1),
        )

    def with_grid(self, grid: TimeGrid) -> "ProblemData":
        return dataclasses.replace(self, grid=grid)

    def shifted_control_weight(self, shift: float) -> "ProblemData":
        """The same problem with R replaced by R + shift * I."""
        return dataclasses.replace(self, R=self.R.plus_scaled_identity(shift))

    # -- serialization ------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "horizon": {"t0": self.grid.t0, "T": self.grid.T, "n_steps": self.grid.n_steps},
            "dims": {"n": self.n, "m": self.m},
            "coefficients": {
                "A": self.A.to_json(),
                "B": self.B.to_json(),
                "C": self.C.to_json(),
                "D": self.D.to_json(),
                "b": self.b.to_json(),
                "sigma": self.sigma.to_json(),
            },
            "weights": {
                "G": self.G.tolist(),
                "Q": self.Q.to_json(),
                "S": self.S.to_json(),
                "R": self.R.to_json(),
                "g": self.g.tolist(),
                "q": self.q.to_json(),
                "rho": self.rho.to_json(),
            },
        }

    def dumps(self, **kwargs: Any) -> str:
        return json.dumps(self.to_json(), **kwargs)


def _require(obj: dict, key: str, context: str) -> Any:
    if key not in obj:
        raise ParseError(f"missing {context}.{key}")
    return obj[key]


def from_dict(doc: dict, *, n_steps_override: int | None = None) -> ProblemData:
    """Build a validated :class:`ProblemData` from a parsed JSON document."""
    if not isinstance(doc, dict):
        raise ParseError(f"problem document must be an object, got {type(doc).__name__}")
    if doc.get("stochastic"):
        raise UnsupportedStochasticData(
            "random coefficients are not supported; remove the 'stochastic' flag"
        )
    horizon = _require(doc, "horizon", "problem")
    dims = _require(doc, "dims", "problem")
    coeffs = _require(doc, "coefficients", "problem")
    weights = _require(doc, "weights", "problem")
    try:
        t0 = float(_require(horizon, "t0", "horizon"))
        T = float(_require(horizon, "T", "horizon"))
        n = int(_require(dims, "n", "dims"))
        m = int(_require(dims, "m", "dims"))
    except (TypeError, ValueError) as exc:
        raise ParseError(f"bad horizon/dims value: {exc}") from None
    if n_steps_override is not None:
        n_steps = int(n_steps_override)
    elif "n_steps" in horizon:
        n_steps = horizon["n_steps"]
    else:
        n_steps = max(2, round(DEFAULT_STEPS_PER_UNIT_TIME * (T - t0)))
    grid = TimeGrid(t0, T, n_steps)

    def path(group: dict, key: str, rows: int, cols: int, *, symmetric: bool = False,
             required: bool = True) -> MatrixPath:
        if key not in group:
            if required:
                raise ParseError(f"missing {key}")
            return MatrixPath.zeros(rows, cols, symmetric=symmetric)
        return MatrixPath.from_json(group[key], rows, cols, symmetric=symmetric, name=key)

    G_obj = _require(weights, "G", "weights")
    if isinstance(G_obj, dict):
        if "const" not in G_obj:
            raise ParseError("G must be a constant matrix")
        G_obj = G_obj["const"]
    G = np.asarray(G_obj, dtype=float)
    g_obj = weights.get("g")
    if isinstance(g_obj, dict):
        if "const" not in g_obj:
            raise ParseError("g must be a constant vector")
        g_obj = g_obj["const"]
    g = np.asarray(g_obj, dtype=float) if g_obj is not None else np.zeros((n, 1))
    if g.shape not in ((n, 1), (n,)):
        raise DimensionError(f"g: expected {n}x1, got {g.shape}")

    return ProblemData(
        grid=grid,
        n=n,
        m=m,
        A=path(coeffs, "A", n, n),
        B=path(coeffs, "B", n, m),
        C=path(coeffs, "C", n, n),
        D=path(coeffs, "D", n, m),
        b=path(coeffs, "b", n, 1, required=False),
        sigma=path(coeffs, "sigma", n, 1, required=False),
        G=G,
        Q=path(weights, "Q", n, n, symmetric=True),
        S=path(weights, "S", m, n, required=False),
        R=path(weights, "R", m, m, symmetric=True),
        g=g.reshape(n, 1),
        q=path(weights, "q", n, 1, required=False),
        rho=path(weights, "rho", m, 1, required=False),
    )


def loads(text: str, *, n_steps_override: int | None = None) -> ProblemData:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from None
    return from_dict(doc, n_steps_override=n_steps_override)


def load_problem(path: str, *, n_steps_override: int | None = None) -> ProblemData:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from None
    return loads(text, n_steps_override=n_steps_override)


@dataclass
class StandardConditionsReport:
    """Classical positivity conditions under which the problem is well posed.

    holds is True when G is positive semidefinite, R is uniformly positive
    definite on the grid (R_uniform_delta > 0), and the running-cost Schur
    complement Q - S' R^{-1} S is positive semidefinite at every node.
    """

    G_psd: bool
    R_uniform_delta: float
    schur_complement_psd: bool
    holds: bool = field(init=False)

    def __post_init__(self) -> None:
        self.holds = bool(
            self.G_psd and self.R_uniform_delta > 0 and self.schur_complement_psd
        )


def standard_conditions(p: ProblemData) -> StandardConditionsReport:
    times = p.grid.times()
    G_psd = bool(np.linalg.eigvalsh(p.G).min() >= -PSD_TOL)
    R_nodes = p.R.sample(times)
    r_min = float(np.linalg.eigvalsh(R_nodes).min())
    delta = max(r_min, 0.0)
    if delta > 0:
        Q_nodes = p.Q.sample(times)
        S_nodes = p.S.sample(times)
        comp = Q_nodes - S_nodes.transpose(0, 2, 1) @ np.linalg.solve(R_nodes, S_nodes)
        comp = (comp + comp.transpose(0, 2, 1)) / 2.0
        schur_ok = bool(np.linalg.eigvalsh(comp).min() >= -PSD_TOL)
    else:
        schur_ok = False
    return StandardConditionsReport(
        G_psd=G_psd, R_uniform_delta=delta, schur_complement_psd=schur_ok
    )
