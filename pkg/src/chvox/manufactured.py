"""Manufactured solutions and the data that make them exact solutions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from chvox.stepper import Sources


@dataclass(frozen=True)
class SineSolution:
    """``c = exp(-t) sin(kx) sin(ky) sin(kz)`` with ``k = 2 pi``.

    ``mu = c^3 - c - kappa lap c``; the volume source balances
    ``dc/dt - (1/Pe) div(M(c) grad mu)`` and the Neumann data are
    ``g_c = grad c . n`` and ``g_mu = M(c) grad mu . n``.
    """

    kappa: float = 1.0
    Pe: float = 1.0
    beta: float = 0.0
    k: float = 2.0 * np.pi

    def _parts(self, t, x):
        k = self.k
        sx, sy, sz = (np.sin(k * x[..., d]) for d in range(3))
        cx, cy, cz = (np.cos(k * x[..., d]) for d in range(3))
        e = np.exp(-t)
        c = e * sx * sy * sz
        grad = e * k * np.stack([cx * sy * sz, sx * cy * sz, sx * sy * cz], axis=-1)
        return c, grad

    def c(self, t, x):
        return self._parts(t, np.asarray(x, dtype=float))[0]

    def grad_c(self, t, x):
        return self._parts(t, np.asarray(x, dtype=float))[1]

    def mobility(self, c):
        # the exact solution stays in [-1, 1], so no clamping is needed
        return 1.0 - self.beta * c * c

    def mu(self, t, x):
        c = self.c(t, x)
        return c**3 - c + 3.0 * self.kappa * self.k**2 * c

    def grad_mu(self, t, x):
        c, g = self._parts(t, np.asarray(x, dtype=float))
        return (3 * c * c - 1 + 3 * self.kappa * self.k**2)[..., None] * g

    def flux(self, t, x):
        """``M(c) grad mu``."""
        c = self.c(t, x)
        return self.mobility(c)[..., None] * self.grad_mu(t, x)

    def _div_flux(self, c, g):
        g2 = np.sum(g * g, axis=-1)
        a = 3 * c * c - 1 + 3 * self.kappa * self.k**2
        lap_c = -3.0 * self.k**2 * c
        lap_mu = 6 * c * g2 + a * lap_c
        return self.mobility(c) * lap_mu - 2 * self.beta * c * a * g2

    def div_flux(self, t, x):
        return self._div_flux(*self._parts(t, np.asarray(x, dtype=float)))

    def f(self, t, x):
        c, g = self._parts(t, np.asarray(x, dtype=float))
        return -c - self._div_flux(c, g) / self.Pe

    def g_c(self, t, x, n):
        return self.grad_c(t, x) @ n

    def g_mu(self, t, x, n):
        return self.flux(t, x) @ n

    def sources(self) -> Sources:
        return Sources(f=self.f, g_c=self.g_c, g_mu=self.g_mu)

    def initial(self, x):
        return self.c(0.0, x)


class _Poly:
    """Sparse trivariate polynomial ``{(a, b, c): coef}``."""

    def __init__(self, terms):
        self.terms = {}
        for coef, e in terms:
            e = tuple(int(v) for v in e)
            self.terms[e] = self.terms.get(e, 0.0) + float(coef)

    @property
    def degree(self):
        return max((sum(e) for e, a in self.terms.items() if a != 0), default=0)

    def diff(self, axis):
        out = []
        for e, a in self.terms.items():
            if e[axis]:
                d = list(e)
                d[axis] -= 1
                out.append((a * e[axis], d))
        return _Poly(out)

    def lap(self):
        parts = [self.diff(d).diff(d) for d in range(3)]
        return _Poly([(a, e) for q in parts for e, a in q.terms.items()])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for (a, b, c), coef in self.terms.items():
            out = out + coef * x[..., 0] ** a * x[..., 1] ** b * x[..., 2] ** c
        return out

    def grad(self, x):
        return np.stack([self.diff(d)(x) for d in range(3)], -1)


@dataclass(frozen=True)
class PolynomialSolution:
    """Stationary polynomial pair ``(c, mu)``.

    ``terms`` and ``mu_terms`` are tuples of ``(coef, (a, b, c))`` for the
    monomials ``x^a y^b z^c``.  A chemical-potential source ``f_mu = mu - c^3
    + c + kappa lap c`` lets ``mu`` be prescribed independently, so with both
    polynomials of degree ``<= p`` every discrete relation holds exactly.
    ``mu_terms`` defaults to ``terms``.
    """

    terms: tuple
    mu_terms: tuple | None = None
    kappa: float = 1.0
    Pe: float = 1.0
    beta: float = 0.0

    @property
    def _c(self):
        return _Poly(self.terms)

    @property
    def _mu(self):
        return _Poly(self.terms if self.mu_terms is None else self.mu_terms)

    @property
    def degree(self):
        return max(self._c.degree, self._mu.degree)

    def c(self, t, x):
        return self._c(x)

    def grad_c(self, t, x):
        return self._c.grad(x)

    def mu(self, t, x):
        return self._mu(x)

    def mobility(self, c):
        return np.maximum(1.0 - self.beta * c * c, 0.0)

    def f(self, t, x):
        c, mu = self._c, self._mu
        cv = c(x)
        grad_m = -2.0 * self.beta * cv[..., None] * c.grad(x)
        div = self.mobility(cv) * mu.lap()(x) + np.sum(grad_m * mu.grad(x), -1)
        return -div / self.Pe

    def f_mu(self, t, x):
        cv = self._c(x)
        return self._mu(x) - cv**3 + cv + self.kappa * self._c.lap()(x)

    def g_c(self, t, x, n):
        return self._c.grad(x) @ n

    def g_mu(self, t, x, n):
        return self.mobility(self._c(x)) * (self._mu.grad(x) @ n)

    def sources(self) -> Sources:
        return Sources(f=self.f, g_c=self.g_c, g_mu=self.g_mu, f_mu=self.f_mu)

    def initial(self, x):
        return self._c(x)
