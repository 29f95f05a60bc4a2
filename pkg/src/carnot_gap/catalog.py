"""Validated instances of the group families used throughout the package."""

from __future__ import annotations

import difflib
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .errors import NotFound, StructureError
from .groups import CarnotGroup, build_group, build_step2_group
from .polynomial import SparsePoly
from .quasinorms import QuasiNormSpec, preset


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    group: CarnotGroup
    norm_presets: dict
    pure_generator_index: Optional[int] = None  # 0-based
    provenance_note: str = ""
    experimental: bool = False

    def norm(self, name: Optional[str] = None) -> QuasiNormSpec:
        if name is None:
            name = next(iter(self.norm_presets))
        if name not in self.norm_presets:
            raise NotFound(
                f"entry {self.name!r} has no norm preset {name!r}; "
                f"available: {', '.join(self.norm_presets)}"
            )
        return self.norm_presets[name]

    def summary(self):
        return {
            "name": self.name,
            "n": self.group.n,
            "step": self.group.step,
            "stratumDims": list(self.group.strat.stratum_dims),
            "weights": list(self.group.weights),
            "norms": list(self.norm_presets),
            "pureGeneratorIndex": None
            if self.pure_generator_index is None
            else self.pure_generator_index + 1,
            "experimental": self.experimental,
            "provenance": self.provenance_note,
        }


def is_pure_partial(group: CarnotGroup, j: int) -> bool:
    X = group.horizontal[j]
    return all(c == (1 if k == j else 0) for k, c in enumerate(X.coeffs))


def _entry(name, group, norm_names, pure=None, note="", experimental=False):
    norms = {nm: preset(nm, group) for nm in norm_names}
    for spec in norms.values():
        spec.validate(group)
    if pure is not None and not is_pure_partial(group, pure):
        raise StructureError(f"{name}: X{pure + 1} is not a pure coordinate derivative")
    return CatalogEntry(name, group, norms, pure, note, experimental)


def _var(n, k, power=1, coeff=1):
    return SparsePoly.variable(n, k) ** power * coeff


def _build_entries():
    entries = []

    g = build_group("euclidean-1d", (1,), [{}])
    entries.append(_entry("euclidean-1d", g, ["powersum-default"], 0, "R with d/dx; N = |x|"))

    g = build_group("euclidean-2d", (2,), [{}, {}])
    entries.append(
        _entry("euclidean-2d", g, ["powersum-default"], 0, "R^2 abelian; N = Euclidean norm")
    )

    g = build_step2_group(2, [[[0, 1], [-1, 0]]], "heisenberg-h1")
    entries.append(
        _entry(
            "heisenberg-h1",
            g,
            ["kaplan", "kaplan-printed", "step2-alpha1", "step2-alpha2", "powersum-default",
             "composite-strata"],
            None,
            "first Heisenberg group, step-2 law with B = [[0,1],[-1,0]]; Kaplan gauge",
        )
    )

    B1 = [[0, 1, 0, 0], [-1, 0, 0, 0], [0, 0, 0, -1], [0, 0, 1, 0]]
    B2 = [[0, 0, 1, 0], [0, 0, 0, 1], [-1, 0, 0, 0], [0, -1, 0, 0]]
    g = build_step2_group(4, [B1, B2], "htype-generic")
    entries.append(
        _entry(
            "htype-generic",
            g,
            ["kaplan", "step2-alpha1", "step2-alpha2", "powersum-default"],
            None,
            "H-type group R^(4+2): B1, B2 orthogonal, anticommuting, B^2 = -I",
        )
    )

    entries.append(aniso_entry(2))

    n = 4
    g = build_group(
        "engel",
        (2, 1, 1),
        [{}, {2: _var(n, 0), 3: _var(n, 0, 2, Fraction(1, 2))}],
    )
    entries.append(
        _entry(
            "engel",
            g,
            ["powersum-default", "composite-strata"],
            0,
            "Engel group R^4 (filiform): X1 = d1, X2 = d2 + x1 d3 + x1^2/2 d4, [X1,X_j] = X_(j+1)",
        )
    )

    g = build_group(
        "kolmogorov-type",
        (2, 1, 1),
        [{}, {2: _var(n, 0), 3: _var(n, 2)}],
    )
    entries.append(
        _entry(
            "kolmogorov-type",
            g,
            ["powersum-default", "composite-strata"],
            0,
            "lift of the Kolmogorov operator d_x^2 + x d_y + y d_z - d_t in coordinates "
            "(x, t, y, z): X1 = d1, X2 = d2 + x1 d3 + x3 d4 (textbook convention)",
        )
    )

    n = 5
    g = build_group(
        "cartan",
        (2, 1, 2),
        [{}, {2: _var(n, 0), 3: _var(n, 0, 2, Fraction(1, 2)), 4: _var(n, 0) * _var(n, 1)}],
    )
    entries.append(
        _entry(
            "cartan",
            g,
            ["powersum-default"],
            0,
            "Cartan group R^5; coordinates are a convention choice (not printed in the source)",
            experimental=True,
        )
    )
    return {e.name: e for e in entries}


def aniso_group(half: int = 2) -> CarnotGroup:
    """Anisotropic Heisenberg group on R^(2n+1): pair (x_1, x_(n+1)) has bracket weight 1/2."""
    m = 2 * half
    B = [[Fraction(0)] * m for _ in range(m)]
    for j in range(half):
        lam = Fraction(1, 2) if j == 0 else Fraction(1)
        B[j][half + j] = lam
        B[half + j][j] = -lam
    return build_step2_group(m, [B], "aniso-heisenberg-2n")


def aniso_entry(half: int = 2) -> CatalogEntry:
    g = aniso_group(half)
    return _entry(
        "aniso-heisenberg-2n",
        g,
        ["aniso-heisenberg", "kaplan", "step2-alpha1", "step2-alpha2"],
        None,
        f"anisotropic Heisenberg group H_{2 * half}(1/2, 1) with n = {half}; "
        "fundamental-solution norm transcribed as printed",
    )


_ENTRIES = _build_entries()


def list_entries(experimental: bool = False):
    return [e for e in _ENTRIES.values() if experimental or not e.experimental]


def get_entry(name: str) -> CatalogEntry:
    try:
        return _ENTRIES[name]
    except KeyError:
        close = difflib.get_close_matches(name, list(_ENTRIES), n=1)
        hint = f"; did you mean {close[0]!r}?" if close else ""
        raise NotFound(f"no catalog entry named {name!r}{hint}") from None


def catalog_pairs(experimental: bool = False):
    """Every (entry, norm-preset name) pair."""
    return [(e, nm) for e in list_entries(experimental) for nm in e.norm_presets]
