"""Shared helpers for the test suite: random expression/point generation."""

from __future__ import annotations

import numpy as np

from hjminmax.expressions import parse

_FUNCS = ("sin", "cos", "tanh")  # exp omitted from random trees: overflow-prone


def random_expr_source(rng: np.random.Generator, depth: int = 3) -> str:
    """Source text of a random expression over t, x, p.

    Coefficients and exponents are kept small so values and derivatives stay
    well inside float range at points drawn from random_point().
    """
    if depth == 0 or rng.random() < 0.25:
        kind = rng.integers(0, 3)
        if kind == 0:
            return format(rng.uniform(-3, 3), ".4f")
        return str(rng.choice(["t", "x", "p"]))
    choice = rng.random()
    a = random_expr_source(rng, depth - 1)
    if choice < 0.55:
        op = rng.choice(["+", "-", "*"])
        b = random_expr_source(rng, depth - 1)
        return f"({a}){op}({b})"
    if choice < 0.70:
        b = random_expr_source(rng, depth - 1)
        # keep denominators away from zero: offset by a constant >= 1.5
        return f"({a})/(({b})*({b})*0.1+{format(rng.uniform(1.5, 3.0), '.4f')})"
    if choice < 0.85:
        return f"({a})^{int(rng.integers(2, 4))}"
    fn = rng.choice(_FUNCS)
    return f"{fn}({a})"


def random_point(rng: np.random.Generator) -> tuple[float, float, float]:
    return tuple(rng.uniform(-1.5, 1.5, size=3))


def random_expression(rng: np.random.Generator, depth: int = 3):
    return parse(random_expr_source(rng, depth))
