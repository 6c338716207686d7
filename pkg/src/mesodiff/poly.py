"""Dense-coefficient multivariate polynomials with exact derivatives."""
from __future__ import annotations

from functools import cached_property

import numpy as np


class Polynomial:
    """Σ_k c_k Π_i x_i^{e_ki}, stored as an exponent matrix and coefficients."""

    def __init__(self, nvars: int, terms):
        merged: dict[tuple[int, ...], float] = {}
        for exps, coef in (terms.items() if isinstance(terms, dict) else terms):
            exps = tuple(int(e) for e in exps)
            if len(exps) != nvars:
                raise ValueError(f"monomial {exps} does not have {nvars} exponents")
            if any(e < 0 for e in exps):
                raise ValueError("exponents must be non-negative")
            coef = float(coef)
            if not np.isfinite(coef):
                raise ValueError("coefficients must be finite")
            merged[exps] = merged.get(exps, 0.0) + coef
        self.nvars = nvars
        self.terms = {e: c for e, c in sorted(merged.items()) if c != 0.0}
        if self.terms:
            self._exps = np.array(list(self.terms), dtype=np.int64)
            self._coefs = np.array(list(self.terms.values()))
        else:
            self._exps = np.zeros((0, nvars), dtype=np.int64)
            self._coefs = np.zeros(0)

    @classmethod
    def constant(cls, nvars: int, c: float):
        return cls(nvars, {(0,) * nvars: c})

    @classmethod
    def linear(cls, coefs, const: float = 0.0):
        n = len(coefs)
        terms = {(0,) * n: const}
        for i, c in enumerate(coefs):
            e = [0] * n
            e[i] = 1
            terms[tuple(e)] = terms.get(tuple(e), 0.0) + c
        return cls(n, terms)

    @property
    def degree(self) -> int:
        return int(self._exps.sum(axis=1).max()) if len(self._coefs) else 0

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.nvars:
            raise ValueError(f"expected {self.nvars} coordinates, got {x.shape[-1]}")
        if not len(self._coefs):
            return np.zeros(x.shape[:-1])
        mono = np.prod(x[..., None, :] ** self._exps, axis=-1)
        return mono @ self._coefs

    def derivative(self, i: int) -> "Polynomial":
        return self._derivs[i]

    @cached_property
    def _derivs(self) -> list["Polynomial"]:
        out = []
        for i in range(self.nvars):
            terms = {}
            for exps, c in self.terms.items():
                if exps[i]:
                    e = list(exps)
                    e[i] -= 1
                    terms[tuple(e)] = c * exps[i]
            out.append(Polynomial(self.nvars, terms))
        return out

    def gradient(self, x) -> np.ndarray:
        return np.stack([d(x) for d in self._derivs], axis=-1)

    def hessian(self, x) -> np.ndarray:
        rows = [np.stack([di.derivative(j)(x) for j in range(self.nvars)], axis=-1) for di in self._derivs]
        return np.stack(rows, axis=-2)

    def to_terms(self) -> list:
        return [[list(e), c] for e, c in self.terms.items()]

    @classmethod
    def from_terms(cls, nvars: int, terms) -> "Polynomial":
        return cls(nvars, [(e, c) for e, c in terms])

    def __repr__(self):
        return f"Polynomial({self.nvars}, {self.terms})"
