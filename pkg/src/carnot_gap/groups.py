"""Stratified (Carnot) groups in Jacobian coordinates.

A group is stored through its stratification and its horizontal left-invariant
vector fields ``X_j = d_j + sum_{k > n1} a_{jk}(x) d_k`` whose coefficients are
exact rational polynomials.  Step-2 groups additionally carry the skew matrices
``B^(k)`` of the composition law

    (x, t) o (xi, tau) = (x + xi, t_k + tau_k + 1/2 <B^(k) x, xi>),

from which the fields are derived.  Coordinates are ordered stratum by stratum,
so the dilation weights follow from ``stratum_dims`` alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidArgument, StructureError, UnsupportedOperation
from .polynomial import SparsePoly, as_fraction


@dataclass(frozen=True)
class Stratification:
    stratum_dims: tuple

    def __post_init__(self):
        dims = tuple(int(d) for d in self.stratum_dims)
        if not dims or any(d <= 0 for d in dims):
            raise StructureError(f"stratum dimensions must be positive, got {self.stratum_dims}")
        object.__setattr__(self, "stratum_dims", dims)

    @property
    def n(self):
        return sum(self.stratum_dims)

    @property
    def step(self):
        return len(self.stratum_dims)

    @property
    def n1(self):
        return self.stratum_dims[0]

    @property
    def weights(self):
        return tuple(j + 1 for j, d in enumerate(self.stratum_dims) for _ in range(d))

    @property
    def homogeneous_dimension(self):
        return sum(self.weights)


@dataclass(frozen=True)
class VectorField:
    """``sum_k coeffs[k] * d/dx_k`` with polynomial coefficients."""

    coeffs: tuple
    declared_degree: int = 1

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(self.coeffs))
        dims = {c.n for c in self.coeffs}
        if dims != {len(self.coeffs)}:
            raise StructureError("vector field coefficients must live in the field's dimension")

    @property
    def n(self):
        return len(self.coeffs)

    def coefficient_values(self, x):
        x = np.asarray(x, dtype=float)
        return np.stack([c(x) for c in self.coeffs], axis=-1)

    def coefficient_jacobian(self, x):
        """``J[..., k, l] = d coeffs[k] / dx_l`` evaluated at ``x``."""
        x = np.asarray(x, dtype=float)
        rows = [np.stack([d(x) for d in ds], axis=-1) for ds in self._coeff_derivs]
        return np.stack(rows, axis=-2)

    @property
    def _coeff_derivs(self):
        cache = self.__dict__.get("_derivs")
        if cache is None:
            cache = [[c.diff(l) for l in range(self.n)] for c in self.coeffs]
            object.__setattr__(self, "_derivs", cache)
        return cache

    def apply_poly(self, f: SparsePoly) -> SparsePoly:
        """Exact ``X f`` for a polynomial ``f``."""
        out = SparsePoly.zero(self.n)
        for k, c in enumerate(self.coeffs):
            if c:
                out = out + c * f.diff(k)
        return out

    def __repr__(self):
        parts = []
        for k, c in enumerate(self.coeffs):
            if c == 1:
                parts.append(f"d{k + 1}")
            elif c:
                parts.append(f"({c!r})*d{k + 1}")
        return " + ".join(parts) or "0"


@dataclass(frozen=True)
class HomogeneityVerdict:
    passed: bool
    witness: Optional[tuple] = None  # (coordinate index, exponents, coefficient)

    def __bool__(self):
        return self.passed


def check_homogeneity(group: "CarnotGroup", X: VectorField) -> HomogeneityVerdict:
    """Exact check that each nonzero ``coeffs[k]`` has G-degree ``sigma_k - degree``."""
    weights = group.strat.weights
    for k, c in enumerate(X.coeffs):
        if not c:
            continue
        wit = c.homogeneity_witness(weights, weights[k] - X.declared_degree)
        if wit is not None:
            return HomogeneityVerdict(False, (k, wit[0], wit[1]))
    return HomogeneityVerdict(True)


@dataclass(frozen=True)
class CarnotGroup:
    name: str
    strat: Stratification
    horizontal: tuple
    step2_matrices: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "horizontal", tuple(self.horizontal))
        if self.step2_matrices is not None:
            mats = tuple(_fraction_matrix(m) for m in self.step2_matrices)
            object.__setattr__(self, "step2_matrices", mats)
        self._validate()

    @property
    def n(self):
        return self.strat.n

    @property
    def n1(self):
        return self.strat.n1

    @property
    def step(self):
        return self.strat.step

    @property
    def weights(self):
        return self.strat.weights

    def _validate(self):
        n, n1 = self.n, self.n1
        if len(self.horizontal) != n1:
            raise StructureError(
                f"{self.name}: expected {n1} horizontal fields, got {len(self.horizontal)}"
            )
        for j, X in enumerate(self.horizontal):
            if X.n != n:
                raise StructureError(f"{self.name}: field X{j + 1} has dimension {X.n} != {n}")
            if X.declared_degree != 1:
                raise StructureError(f"{self.name}: horizontal field X{j + 1} must have degree 1")
            for k in range(n1):
                expected = SparsePoly.constant(n, 1 if k == j else 0)
                if X.coeffs[k] != expected:
                    raise StructureError(
                        f"{self.name}: X{j + 1} coefficient of d{k + 1} must be "
                        f"{1 if k == j else 0}, got {X.coeffs[k]!r}"
                    )
            verdict = check_homogeneity(self, X)
            if not verdict:
                k, exps, c = verdict.witness
                raise StructureError(
                    f"{self.name}: X{j + 1} coefficient of d{k + 1} has non-homogeneous "
                    f"monomial {c}*x^{exps}"
                )
        if self.step2_matrices is not None:
            if self.step != 2:
                raise StructureError(f"{self.name}: step-2 matrices given for a step-{self.step} group")
            if len(self.step2_matrices) != n - n1:
                raise StructureError(
                    f"{self.name}: need {n - n1} matrices B^(k), got {len(self.step2_matrices)}"
                )
            for k, B in enumerate(self.step2_matrices):
                _check_skew(B, n1, k)
            derived = step2_fields(n1, self.step2_matrices)
            for j, (X, Y) in enumerate(zip(self.horizontal, derived)):
                if X.coeffs != Y.coeffs:
                    raise StructureError(
                        f"{self.name}: X{j + 1} disagrees with the fields of the step-2 law"
                    )

    def to_json(self):
        out = {"name": self.name, "stratumDims": list(self.strat.stratum_dims)}
        if self.step2_matrices is not None:
            out["step2Matrices"] = [[[str(v) for v in row] for row in B] for B in self.step2_matrices]
        else:
            n1 = self.n1
            out["horizontalFields"] = [
                [
                    {"targetCoord": k + 1, "monomials": c.to_json()}
                    for k, c in enumerate(X.coeffs)
                    if k >= n1 and c
                ]
                for X in self.horizontal
            ]
        return out


def _fraction_matrix(m):
    return tuple(tuple(as_fraction(v) for v in row) for row in m)


def _check_skew(B, n1, index):
    if len(B) != n1 or any(len(row) != n1 for row in B):
        raise StructureError(f"matrix B^({index + 1}) must be {n1}x{n1}")
    for i in range(n1):
        for j in range(i, n1):
            if B[i][j] != -B[j][i]:
                raise StructureError(
                    f"matrix B^({index + 1}) is not skew-symmetric: entry ({i + 1},{j + 1}) = "
                    f"{B[i][j]} but entry ({j + 1},{i + 1}) = {B[j][i]}",
                )


def step2_fields(n1, matrices):
    """``X_j = d_{x_j} + 1/2 sum_k sum_i B^(k)_{ij} x_i d_{t_k}``."""
    m = len(matrices)
    n = n1 + m
    fields = []
    for j in range(n1):
        coeffs = [SparsePoly.constant(n, 1 if k == j else 0) for k in range(n1)]
        for k, B in enumerate(matrices):
            terms = {}
            for i in range(n1):
                if B[i][j]:
                    e = [0] * n
                    e[i] = 1
                    terms[tuple(e)] = Fraction(1, 2) * B[i][j]
            coeffs.append(SparsePoly(n, terms))
        fields.append(VectorField(tuple(coeffs), 1))
    return fields


def build_step2_group(n1: int, matrices, name: str = "step2") -> CarnotGroup:
    if not matrices:
        raise StructureError("need at least one matrix B^(k)")
    mats = [_fraction_matrix(B) for B in matrices]
    for k, B in enumerate(mats):
        _check_skew(B, n1, k)
    strat = Stratification((n1, len(mats)))
    return CarnotGroup(name, strat, tuple(step2_fields(n1, mats)), tuple(mats))


def build_group(name: str, stratum_dims, corrections) -> CarnotGroup:
    """Group from horizontal correction terms.

    ``corrections[j]`` maps a 0-based target coordinate ``k >= n1`` to the
    polynomial coefficient of ``d_k`` in ``X_j``.
    """
    strat = Stratification(tuple(stratum_dims))
    n, n1 = strat.n, strat.n1
    if len(corrections) != n1:
        raise StructureError(f"{name}: expected corrections for {n1} generators")
    fields = []
    for j, corr in enumerate(corrections):
        coeffs = [SparsePoly.constant(n, 1 if k == j else 0) for k in range(n)]
        for k, poly in corr.items():
            if k < n1 or k >= n:
                raise StructureError(f"{name}: X{j + 1} correction targets coordinate {k + 1}")
            coeffs[k] = poly
        fields.append(VectorField(tuple(coeffs), 1))
    return CarnotGroup(name, strat, tuple(fields))


# -- group operations ------------------------------------------------------

def dilate(group: CarnotGroup, lam, x):
    """``delta_lam(x) = (lam^sigma_1 x_1, ..., lam^sigma_n x_n)`` on float arrays."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0):
        raise InvalidArgument(f"dilation factor must be positive, got {lam}")
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != group.n:
        raise InvalidArgument(f"point has {x.shape[-1]} coordinates, group dimension is {group.n}")
    w = np.asarray(group.weights, dtype=float)
    return x * lam[..., None] ** w


def dilate_exact(group: CarnotGroup, lam, x):
    lam = as_fraction(lam)
    if lam <= 0:
        raise InvalidArgument(f"dilation factor must be positive, got {lam}")
    if len(x) != group.n:
        raise InvalidArgument("dimension mismatch")
    return tuple(lam**s * as_fraction(v) for s, v in zip(group.weights, x))


def _require_step2(group):
    if group.step2_matrices is None:
        raise UnsupportedOperation(
            f"composition is only implemented for step-2 groups; {group.name} has step {group.step}"
        )


def compose(group: CarnotGroup, x, y):
    """Step-2 group law on float arrays of shape ``(..., n)``."""
    _require_step2(group)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n1 = group.n1
    out = x + y
    for k, B in enumerate(group.step2_matrices):
        Bf = np.array(B, dtype=float)
        Bx = x[..., :n1] @ Bf.T
        out[..., n1 + k] += 0.5 * np.sum(Bx * y[..., :n1], axis=-1)
    return out


def compose_exact(group: CarnotGroup, x, y):
    _require_step2(group)
    n1 = group.n1
    x = [as_fraction(v) for v in x]
    y = [as_fraction(v) for v in y]
    out = [a + b for a, b in zip(x, y)]
    for k, B in enumerate(group.step2_matrices):
        s = Fraction(0)
        for i in range(n1):
            Bx_i = sum((B[i][l] * x[l] for l in range(n1) if B[i][l]), Fraction(0))
            s += Bx_i * y[i]
        out[n1 + k] += s / 2
    return tuple(out)


def inverse_exact(group: CarnotGroup, x):
    _require_step2(group)
    return tuple(-as_fraction(v) for v in x)


def apply_vector_field(X: VectorField, f, x):
    """``(X f)(x) = sum_k coeffs[k](x) * d_k f(x)``."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != X.n or getattr(f, "n", X.n) != X.n:
        raise InvalidArgument("dimension mismatch between field, function and point")
    return np.sum(X.coefficient_values(x) * f.gradient(x), axis=-1)


# -- JSON group files ------------------------------------------------------

def group_from_json(data: dict, source_text: Optional[str] = None) -> CarnotGroup:
    """Build a group from the JSON schema; structural errors carry a line number when possible."""
    try:
        name = data.get("name", "unnamed")
        dims = data["stratumDims"]
        if "step2Matrices" in data:
            mats = data["step2Matrices"]
            for k, B in enumerate(mats):
                try:
                    fm = _fraction_matrix(B)
                    _check_skew(fm, dims[0], k)
                except StructureError as err:
                    raise _located(err, source_text, ["step2Matrices", k]) from None
                except (ValueError, ZeroDivisionError, TypeError) as err:
                    raise _located(
                        StructureError(f"matrix B^({k + 1}): bad entry ({err})"),
                        source_text,
                        ["step2Matrices", k],
                    ) from None
            group = build_step2_group(dims[0], mats, name)
            if list(group.strat.stratum_dims) != list(dims):
                raise StructureError(
                    f"stratumDims {dims} inconsistent with {len(mats)} matrices of size {dims[0]}"
                )
            return group
        strat = Stratification(tuple(dims))
        raw = data.get("horizontalFields", [[] for _ in range(strat.n1)])
        corrections = []
        for j, entries in enumerate(raw):
            corr = {}
            for e_idx, entry in enumerate(entries):
                k = int(entry["targetCoord"]) - 1
                try:
                    corr[k] = SparsePoly.from_json(strat.n, entry["monomials"])
                except (ValueError, ZeroDivisionError) as err:
                    raise _located(
                        StructureError(f"X{j + 1}: bad monomial ({err})"),
                        source_text,
                        ["horizontalFields", j, e_idx],
                    ) from None
            corrections.append(corr)
        try:
            return build_group(name, dims, corrections)
        except StructureError as err:
            msg = str(err)
            path = ["horizontalFields"]
            for j in range(len(raw)):
                if f"X{j + 1} " in msg:
                    path = ["horizontalFields", j]
            raise _located(err, source_text, path) from None
    except KeyError as err:
        raise StructureError(f"group file is missing required key {err}") from None


def load_group_file(path) -> CarnotGroup:
    with open(path) as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as err:
        raise StructureError(f"{path}: line {err.lineno}: invalid JSON ({err.msg})") from None
    try:
        return group_from_json(data, text)
    except StructureError as err:
        raise StructureError(f"{path}: {err}") from None


def _located(err: StructureError, text: Optional[str], path: Sequence):
    line = json_line_of(text, path) if text else None
    if line is None:
        return err
    return StructureError(f"line {line}: {err}")


def json_line_of(text: str, path: Sequence):
    """1-based line where the JSON value at ``path`` (keys / indices) starts, else ``None``."""
    decoder = json.JSONDecoder()

    def skip_ws(i):
        while i < len(text) and text[i] in " \t\r\n":
            i += 1
        return i

    def walk(i, depth):
        i = skip_ws(i)
        if depth == len(path):
            return i, True
        want = path[depth]
        if text[i] == "{":
            i = skip_ws(i + 1)
            while text[i] != "}":
                key, i = json.decoder.scanstring(text, i + 1)
                i = skip_ws(i)
                i = skip_ws(i + 1)  # colon
                if key == want:
                    return walk(i, depth + 1)
                _, i = decoder.raw_decode(text, i)
                i = skip_ws(i)
                if text[i] == ",":
                    i = skip_ws(i + 1)
            return i, False
        if text[i] == "[":
            i = skip_ws(i + 1)
            idx = 0
            while text[i] != "]":
                if idx == want:
                    return walk(i, depth + 1)
                _, i = decoder.raw_decode(text, i)
                i = skip_ws(i)
                if text[i] == ",":
                    i = skip_ws(i + 1)
                idx += 1
            return i, False
        return i, False

    try:
        pos, found = walk(0, 0)
    except (IndexError, ValueError):
        return None
    return text.count("\n", 0, pos) + 1 if found else None
