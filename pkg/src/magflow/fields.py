"""Scalar and drift fields on the unit sphere, specified as named built-ins.

Scalar fields (densities, potentials, conformal exponents) come from a small
closed family so configs can name them textually:

    constant(c)            f(q) = c
    height(a, c)           f(q) = a*z + c
    linear(ax, ay, az, c)  f(q) = ax*x + ay*y + az*z + c
    zonal_poly(c0, .., ck) f(q) = sum_k ck * z^k

Drift fields (tangent vector fields whose dual 1-form enters the Lagrangian):

    none
    azimuthal(a)           W(q) = a * (z_hat x q), rotation about the z-axis
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

_SPEC_RE = re.compile(r"^\s*([a-z_]+)\s*(?:\(\s*([^)]*)\s*\))?\s*$")


def _parse_args(name: str, argstr: str | None) -> tuple[float, ...]:
    if argstr is None or argstr.strip() == "":
        return ()
    try:
        return tuple(float(tok) for tok in argstr.split(","))
    except ValueError as exc:
        raise ValidationError(name, f"bad numeric argument list '{argstr}'") from exc


@dataclass(frozen=True)
class ScalarField:
    """Scalar function on S^2 from the built-in family, with ambient gradient."""

    kind: str
    coeffs: tuple[float, ...] = field(default_factory=tuple)

    @staticmethod
    def constant(c: float) -> "ScalarField":
        return ScalarField("constant", (float(c),))

    @staticmethod
    def height(a: float, c: float) -> "ScalarField":
        return ScalarField("linear", (0.0, 0.0, float(a), float(c)))

    @staticmethod
    def linear(ax: float, ay: float, az: float, c: float) -> "ScalarField":
        return ScalarField("linear", (float(ax), float(ay), float(az), float(c)))

    @staticmethod
    def zonal_poly(*c: float) -> "ScalarField":
        return ScalarField("zonal_poly", tuple(float(v) for v in c))

    @staticmethod
    def parse(spec: str) -> "ScalarField":
        m = _SPEC_RE.match(spec)
        if not m:
            raise ValidationError(spec, "unparseable field spec")
        name, args = m.group(1), _parse_args(m.group(1), m.group(2))
        if name == "constant":
            if len(args) != 1:
                raise ValidationError(spec, "constant(c) takes one argument")
            return ScalarField.constant(args[0])
        if name == "height":
            if len(args) != 2:
                raise ValidationError(spec, "height(a, c) takes two arguments")
            return ScalarField.height(args[0], args[1])
        if name == "linear":
            if len(args) != 4:
                raise ValidationError(spec, "linear(ax, ay, az, c) takes four arguments")
            return ScalarField.linear(*args)
        if name == "zonal_poly":
            if not args:
                raise ValidationError(spec, "zonal_poly needs at least one coefficient")
            return ScalarField.zonal_poly(*args)
        raise ValidationError(spec, f"unknown scalar field kind '{name}'")

    def __call__(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if self.kind == "constant":
            return np.broadcast_to(np.float64(self.coeffs[0]), q.shape[:-1]).copy()
        if self.kind == "linear":
            ax, ay, az, c = self.coeffs
            return ax * q[..., 0] + ay * q[..., 1] + az * q[..., 2] + c
        if self.kind == "zonal_poly":
            z = q[..., 2]
            out = np.zeros_like(z)
            for ck in reversed(self.coeffs):
                out = out * z + ck
            return out
        raise ValidationError(self.kind, "unknown scalar field kind")

    def grad(self, q: np.ndarray) -> np.ndarray:
        """Ambient gradient of the natural extension off the sphere."""
        q = np.asarray(q, dtype=float)
        g = np.zeros(q.shape)
        if self.kind == "constant":
            return g
        if self.kind == "linear":
            g[..., 0], g[..., 1], g[..., 2] = self.coeffs[0], self.coeffs[1], self.coeffs[2]
            return g
        if self.kind == "zonal_poly":
            z = q[..., 2]
            dp = np.zeros_like(z)
            for k in range(len(self.coeffs) - 1, 0, -1):
                dp = dp * z + k * self.coeffs[k]
            g[..., 2] = dp
            return g
        raise ValidationError(self.kind, "unknown scalar field kind")

    def scalar_fn(self):
        """Plain-Python evaluator (x, y, z) -> float for tight loops."""
        if self.kind == "constant":
            c = self.coeffs[0]
            return lambda x, y, z: c
        if self.kind == "linear":
            ax, ay, az, c = self.coeffs
            return lambda x, y, z: ax * x + ay * y + az * z + c
        if self.kind == "zonal_poly":
            coeffs = self.coeffs

            def poly(x, y, z):
                out = 0.0
                for ck in reversed(coeffs):
                    out = out * z + ck
                return out

            return poly
        raise ValidationError(self.kind, "unknown scalar field kind")

    def grad_fn(self):
        """Plain-Python ambient-gradient evaluator for tight loops."""
        if self.kind == "constant":
            return lambda x, y, z: (0.0, 0.0, 0.0)
        if self.kind == "linear":
            ax, ay, az, _ = self.coeffs
            return lambda x, y, z: (ax, ay, az)
        if self.kind == "zonal_poly":
            coeffs = self.coeffs

            def dpoly(x, y, z):
                out = 0.0
                for k in range(len(coeffs) - 1, 0, -1):
                    out = out * z + k * coeffs[k]
                return (0.0, 0.0, out)

            return dpoly
        raise ValidationError(self.kind, "unknown scalar field kind")

    @property
    def is_zonal(self) -> bool:
        if self.kind == "linear":
            return self.coeffs[0] == 0.0 and self.coeffs[1] == 0.0
        return True

    def zonal_profile(self, z: np.ndarray) -> np.ndarray:
        """Value as a function of z alone (requires ``is_zonal``)."""
        if not self.is_zonal:
            raise ValidationError(self.spec(), "field is not zonal")
        q = np.zeros(np.shape(z) + (3,))
        q[..., 2] = z
        return self(q)

    def sup_abs(self) -> float:
        """Exact-ish sup of |f| over the sphere (dense z-grid for zonal polys)."""
        if self.kind == "constant":
            return abs(self.coeffs[0])
        if self.kind == "linear":
            ax, ay, az, c = self.coeffs
            r = float(np.sqrt(ax * ax + ay * ay + az * az))
            return max(abs(c + r), abs(c - r))
        z = np.linspace(-1.0, 1.0, 20001)
        return float(np.max(np.abs(self.zonal_profile(z))))

    def spec(self) -> str:
        args = ", ".join(repr(c) for c in self.coeffs)
        return f"{self.kind}({args})"


@dataclass(frozen=True)
class DriftField:
    """Tangent vector field W; the Lagrangian drift term is <W(q), v>."""

    kind: str
    coeffs: tuple[float, ...] = field(default_factory=tuple)

    @staticmethod
    def none() -> "DriftField":
        return DriftField("none", ())

    @staticmethod
    def azimuthal(a: float) -> "DriftField":
        return DriftField("azimuthal", (float(a),))

    @staticmethod
    def parse(spec: str) -> "DriftField":
        m = _SPEC_RE.match(spec)
        if not m:
            raise ValidationError(spec, "unparseable drift spec")
        name, args = m.group(1), _parse_args(m.group(1), m.group(2))
        if name == "none":
            return DriftField.none()
        if name == "azimuthal":
            if len(args) != 1:
                raise ValidationError(spec, "azimuthal(a) takes one argument")
            return DriftField.azimuthal(args[0])
        raise ValidationError(spec, f"unknown drift kind '{name}'")

    @property
    def is_zero(self) -> bool:
        return self.kind == "none" or all(c == 0.0 for c in self.coeffs)

    def vector(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        w = np.zeros(q.shape)
        if self.kind == "none":
            return w
        if self.kind == "azimuthal":
            a = self.coeffs[0]
            w[..., 0] = -a * q[..., 1]
            w[..., 1] = a * q[..., 0]
            return w
        raise ValidationError(self.kind, "unknown drift kind")

    def jac_t_apply(self, q: np.ndarray, v: np.ndarray) -> np.ndarray:
        """J_W(q)^T v, the base-derivative of <W(q), v> at fixed v."""
        v = np.asarray(v, dtype=float)
        out = np.zeros(v.shape)
        if self.kind == "none":
            return out
        if self.kind == "azimuthal":
            a = self.coeffs[0]
            out[..., 0] = a * v[..., 1]
            out[..., 1] = -a * v[..., 0]
            return out
        raise ValidationError(self.kind, "unknown drift kind")

    def exterior_density_round(self, q: np.ndarray) -> np.ndarray:
        """Density h with dW_flat = h * dA_round on the sphere."""
        q = np.asarray(q, dtype=float)
        if self.kind == "none":
            return np.zeros(q.shape[:-1])
        if self.kind == "azimuthal":
            # the dual 1-form of a*(z_hat x q) is a*sin^2(theta)*dphi
            return 2.0 * self.coeffs[0] * q[..., 2]
        raise ValidationError(self.kind, "unknown drift kind")

    def spec(self) -> str:
        if self.kind == "none":
            return "none"
        args = ", ".join(repr(c) for c in self.coeffs)
        return f"{self.kind}({args})"
