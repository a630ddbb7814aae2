"""Monomial observable dictionaries.

A dictionary is the ordered set of monomials ``x^alpha`` with total degree
up to ``max_degree`` (constant term included, graded-lexicographic order).
It defines the lifting map into observable space and the constant selection
matrix that recovers the original state from a lifted vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np


@dataclass(frozen=True)
class ObservableDictionary:
    """Ordered monomial basis over ``n_states`` variables.

    ``exponents[j]`` is the multi-index of basis function ``j``; the constant
    monomial is first, followed by the pure states ``x_1 .. x_n``, then higher
    degrees in graded-lex order. ``dimension`` equals
    ``binomial(n_states + max_degree, max_degree)``.
    """

    n_states: int
    max_degree: int
    exponents: tuple[tuple[int, ...], ...]
    # Incremental evaluation: monomial j = monomial _parent[j] * x[_factor[j]].
    _parent: np.ndarray = field(repr=False, compare=False, default=None)
    _factor: np.ndarray = field(repr=False, compare=False, default=None)

    @property
    def dimension(self) -> int:
        return len(self.exponents)

    def lift(self, x) -> np.ndarray:
        """Evaluate all monomials at a single state vector."""
        return self.lift_many(np.asarray(x, dtype=float).reshape(-1, 1))[:, 0]

    def lift_many(self, states: np.ndarray) -> np.ndarray:
        """Evaluate all monomials column-wise.

        ``states`` is ``(n_states, N)``; the result is ``(dimension, N)``
        with row ``j`` equal to ``prod_i states[i]**exponents[j][i]``.
        """
        states = np.asarray(states, dtype=float)
        if states.ndim != 2 or states.shape[0] != self.n_states:
            raise ValueError(
                f"expected states of shape ({self.n_states}, N), "
                f"got {states.shape}")
        if not np.all(np.isfinite(states)):
            raise ValueError("states contain non-finite entries")
        out = np.empty((self.dimension, states.shape[1]), dtype=float)
        out[0] = 1.0
        for j in range(1, self.dimension):
            out[j] = out[self._parent[j]] * states[self._factor[j]]
        return out

    def state_extractor(self) -> np.ndarray:
        """Selection matrix ``C`` with ``C @ lift(x) == x`` exactly.

        The degree-1 monomials occupy positions ``1 .. n_states``, so row
        ``i`` selects column ``i + 1``.
        """
        c = np.zeros((self.n_states, self.dimension))
        for i in range(self.n_states):
            c[i, 1 + i] = 1.0
        return c

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "max_degree": self.max_degree,
            "exponents": [list(e) for e in self.exponents],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ObservableDictionary":
        built = build_monomial_dictionary(data["n_states"], data["max_degree"])
        stored = tuple(tuple(e) for e in data["exponents"])
        if stored != built.exponents:
            raise ValueError("stored exponent order does not match the "
                             "canonical graded-lex construction")
        return built


def build_monomial_dictionary(n_states: int, max_degree: int) -> ObservableDictionary:
    """Construct the monomial dictionary of all multi-indices with total
    degree <= ``max_degree`` over ``n_states`` variables.

    Ordering is graded lexicographic: by total degree, then with earlier
    variables taking precedence, e.g. for two states and degree two:
    ``(0,0), (1,0), (0,1), (2,0), (1,1), (0,2)``.
    """
    if n_states < 1:
        raise ValueError(f"n_states must be >= 1, got {n_states}")
    if max_degree < 1:
        raise ValueError(f"max_degree must be >= 1, got {max_degree}")

    exponents: list[tuple[int, ...]] = [(0,) * n_states]
    parents = [0]
    factors = [0]
    index_of = {exponents[0]: 0}
    for degree in range(1, max_degree + 1):
        # Sorted variable tuples enumerate each multi-index exactly once,
        # in descending lex order of the exponent vectors within a grade.
        for combo in combinations_with_replacement(range(n_states), degree):
            alpha = [0] * n_states
            for var in combo:
                alpha[var] += 1
            alpha = tuple(alpha)
            index_of[alpha] = len(exponents)
            exponents.append(alpha)
            # Remove the last (largest-index) variable to find the parent.
            parent_alpha = list(alpha)
            parent_alpha[combo[-1]] -= 1
            parents.append(index_of[tuple(parent_alpha)])
            factors.append(combo[-1])

    expected = math.comb(n_states + max_degree, max_degree)
    assert len(exponents) == expected

    return ObservableDictionary(
        n_states=n_states,
        max_degree=max_degree,
        exponents=tuple(exponents),
        _parent=np.asarray(parents, dtype=np.intp),
        _factor=np.asarray(factors, dtype=np.intp),
    )


def lift(dictionary: ObservableDictionary, x) -> np.ndarray:
    """Functional form of :meth:`ObservableDictionary.lift`."""
    return dictionary.lift(x)


def lift_many(dictionary: ObservableDictionary, states) -> np.ndarray:
    """Functional form of :meth:`ObservableDictionary.lift_many`."""
    return dictionary.lift_many(states)


def state_extractor(dictionary: ObservableDictionary) -> np.ndarray:
    """Functional form of :meth:`ObservableDictionary.state_extractor`."""
    return dictionary.state_extractor()
