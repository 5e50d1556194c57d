"""Benchmark conservative ODE systems and the Stormer-Verlet comparator."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .core import (
    CollisionError,
    ConservativeSystem,
    Invariant,
    InvariantSet,
    SeparableSplit,
)

#: Smallest admissible inter-body distance / field radius before aborting.
COLLISION_GUARD = 1e-12
GRAVITATIONAL_CONSTANT = 6.67430e-11  # m^3 kg^-1 s^-2
SUN_GM = 1.32712440018e20  # m^3 s^-2
JULIAN_YEAR = 3.15576e7  # s


# -- harmonic oscillator ----------------------------------------------------

def harmonic_oscillator(omega: float = 10.0, y0=(1.0, 0.0)) -> ConservativeSystem:
    """``y = (p, q)``, ``y' = [[0, w], [-w, 0]] y`` with ``H = w/2 |y|^2``."""
    if not omega > 0:
        raise ValueError("omega must be positive")
    y0 = np.asarray(y0, dtype=np.float64)

    def rhs(y):
        return np.array([omega * y[1], -omega * y[0]])

    def exact(t):
        c, s = np.cos(omega * t), np.sin(omega * t)
        return np.array([c * y0[0] + s * y0[1], -s * y0[0] + c * y0[1]])

    H = Invariant("H", lambda y: 0.5 * omega * float(y @ y), lambda y: omega * y)
    return ConservativeSystem(
        "harmonic", 2, rhs, InvariantSet.at([H], y0), y0,
        exact=exact, params={"omega": omega},
    )


# -- perturbed Kepler -------------------------------------------------------

KEPLER_PERTURBATION = 0.005


def perturbed_kepler(eccentricity: float = 0.6) -> ConservativeSystem:
    """Planar Kepler problem in a Schwarzschild-type potential, ``y = (q1, q2, p1, p2)``."""
    e = float(eccentricity)
    if not 0.0 <= e < 1.0:
        raise ValueError("eccentricity must lie in [0, 1)")
    eps = KEPLER_PERTURBATION

    def radius(q):
        r = np.hypot(q[0], q[1])
        if r < COLLISION_GUARD:
            raise CollisionError(f"Kepler orbit reached the singularity (r = {r:.3e})")
        return r

    def grad_V(q):
        r = radius(q)
        return q * (1.0 / r**3 + 1.5 * eps / r**5)

    def rhs(y):
        return np.concatenate([y[2:], -grad_V(y[:2])])

    def H(y):
        r = radius(y[:2])
        return 0.5 * (y[2] ** 2 + y[3] ** 2) - 1.0 / r - eps / (2.0 * r**3)

    def grad_H(y):
        return np.concatenate([grad_V(y[:2]), y[2:]])

    def L(y):
        return y[0] * y[3] - y[1] * y[2]

    def grad_L(y):
        return np.array([y[3], -y[2], -y[1], y[0]])

    y0 = np.array([1.0 - e, 0.0, 0.0, np.sqrt((1.0 + e) / (1.0 - e))])
    invs = [Invariant("H", H, grad_H), Invariant("L", L, grad_L)]
    split = SeparableSplit(2, lambda p: p, grad_V)
    return ConservativeSystem(
        "kepler", 4, rhs, InvariantSet.at(invs, y0), y0,
        separable=split, params={"eccentricity": e},
    )


# -- solar system -----------------------------------------------------------

# name, position (m), velocity (m/s), G*mass (m^3/s^2)
_PLANETS = [
    ("Mercury", (1.563021412664830e+10, 4.327888220902108e+10, 2.102123103174893e+09),
     (-5.557001175482630e+04, 1.840863017229157e+04, 6.602621285552567e+03), 2.203209e+13),
    ("Venus", (-9.030189258080004e+10, 5.802615456116644e+10, 6.006513603716755e+09),
     (-1.907374632532257e+04, -2.963461693326599e+04, 6.946391255404438e+02), 3.248586e+14),
    ("Earth", (-1.018974476358996e+11, 1.065689158175689e+11, -3.381951053601424e+06),
     (-2.201749257051057e+04, -2.071074857788741e+04, 1.575245213712245e+00), 3.986004e+14),
    ("Mars", (-2.443763125844157e+11, 4.473211564076996e+10, 6.935657388967808e+09),
     (-3.456935754608896e+03, -2.176307370133160e+04, -3.711433859326417e-02), 4.282830e+13),
    ("Jupiter", (-2.3516546827532200e+11, 7.421837640432589e+11, 2.179850895804323e+09),
     (-1.262559929908801e+04, -3.332552395475581e+03, 2.962741332356101e+02), 1.266865e+17),
    ("Saturn", (-1.011712827283427e+12, -1.077496255617324e+12, 5.901251900068215e+10),
     (6.507898648442419e+03, -6.640809674126991e+03, -1.434198106014633e+02), 3.793120e+16),
    ("Uranus", (2.934840841770302e+12, 6.048399137411513e+11, -3.576451387567792e+10),
     (-1.433852081777671e+03, 6.347897341634990e+03, 4.228261484335974e+01), 5.793966e+15),
    ("Neptune", (4.055112581124043e+12, -1.914578873112663e+12, -5.400973716179796e+10),
     (2.275119229131818e+03, 4.942356914027413e+03, -1.548950389954096e+02), 6.835107e+15),
    ("Pluto", (9.514009594170194e+11, -4.776029500570151e+12, 2.358627841705075e+11),
     (5.431808363374300e+03, -2.387056445508962e+01, -1.551877289694926e+03), 8.72400e+11),
]


@dataclass(frozen=True)
class SolarSystem:
    names: tuple[str, ...]
    gm: np.ndarray  # (n,) m^3/s^2
    positions: np.ndarray  # (n, 3) m
    velocities: np.ndarray  # (n, 3) m/s

    @property
    def masses(self) -> np.ndarray:
        return self.gm / GRAVITATIONAL_CONSTANT

    @property
    def momenta(self) -> np.ndarray:
        return self.masses[:, None] * self.velocities

    def state(self) -> np.ndarray:
        return np.concatenate([self.positions.ravel(), self.momenta.ravel()])


def _with_sun(names, gm, pos, vel) -> SolarSystem:
    gm = np.asarray(gm, dtype=np.float64)
    pos = np.asarray(pos, dtype=np.float64)
    vel = np.asarray(vel, dtype=np.float64)
    # Sun at the origin moving so that the total linear momentum vanishes.
    sun_vel = -(gm[:, None] * vel).sum(axis=0) / SUN_GM
    return SolarSystem(
        ("Sun",) + tuple(names),
        np.concatenate([[SUN_GM], gm]),
        np.vstack([np.zeros(3), pos]),
        np.vstack([sun_vel, vel]),
    )


def load_solar_data(csv_path: Optional[str | Path] = None) -> SolarSystem:
    """Sun plus the nine tabulated bodies.

    ``csv_path`` optionally replaces the embedded table; it must have the
    columns ``name, x, y, z, vx, vy, vz, gm`` in SI units. A row named
    ``Sun`` is used as given; otherwise the Sun is synthesised at the origin
    with zero total momentum.
    """
    if csv_path is None:
        names = [row[0] for row in _PLANETS]
        return _with_sun(
            names,
            [row[3] for row in _PLANETS],
            [row[1] for row in _PLANETS],
            [row[2] for row in _PLANETS],
        )
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    names = [r["name"].strip() for r in rows]
    pos = [[float(r[k]) for k in ("x", "y", "z")] for r in rows]
    vel = [[float(r[k]) for k in ("vx", "vy", "vz")] for r in rows]
    gm = [float(r["gm"]) for r in rows]
    if "Sun" in names:
        return SolarSystem(tuple(names), np.array(gm), np.array(pos), np.array(vel))
    return _with_sun(names, gm, pos, vel)


def solar_system(data: Optional[SolarSystem] = None) -> ConservativeSystem:
    """N-body system with state ``[q_1..q_n, p_1..p_n]`` (SI units, d = 6n)."""
    data = load_solar_data() if data is None else data
    n = len(data.names)
    G = GRAVITATIONAL_CONSTANT
    m = data.masses
    gm = data.gm
    pair_i, pair_j = np.triu_indices(n, k=1)
    # G m_i m_j computed as (G m_i)(G m_j)/G from the tabulated products
    gmm = gm[pair_i] * gm[pair_j] / G

    def separations(q):
        q = q.reshape(n, 3)
        diff = q[pair_i] - q[pair_j]
        dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        k = int(np.argmin(dist))
        if dist[k] < COLLISION_GUARD:
            raise CollisionError(
                f"bodies {data.names[pair_i[k]]} and {data.names[pair_j[k]]} collided"
            )
        return diff, dist

    def grad_V(q):
        diff, dist = separations(q)
        w = (gmm / dist**3)[:, None] * diff
        out = np.zeros((n, 3))
        np.add.at(out, pair_i, w)
        np.add.at(out, pair_j, -w)
        return out.ravel()

    def grad_T(p):
        return (p.reshape(n, 3) / m[:, None]).ravel()

    def rhs(y):
        return np.concatenate([grad_T(y[3 * n:]), -grad_V(y[:3 * n])])

    def H(y):
        p = y[3 * n:].reshape(n, 3)
        _, dist = separations(y[:3 * n])
        return 0.5 * float(np.sum(np.einsum("ij,ij->i", p, p) / m)) - float(np.sum(gmm / dist))

    def grad_H(y):
        return np.concatenate([grad_V(y[:3 * n]), grad_T(y[3 * n:])])

    def angular(k):
        a, b = {0: (1, 2), 1: (2, 0), 2: (0, 1)}[k]

        def value(y):
            q = y[:3 * n].reshape(n, 3)
            p = y[3 * n:].reshape(n, 3)
            return float(np.sum(q[:, a] * p[:, b] - q[:, b] * p[:, a]))

        def grad(y):
            q = y[:3 * n].reshape(n, 3)
            p = y[3 * n:].reshape(n, 3)
            gq = np.zeros((n, 3))
            gp = np.zeros((n, 3))
            gq[:, a], gq[:, b] = p[:, b], -p[:, a]
            gp[:, b], gp[:, a] = q[:, a], -q[:, b]
            return np.concatenate([gq.ravel(), gp.ravel()])

        return Invariant("L" + "xyz"[k], value, grad)

    y0 = data.state()
    invs = [Invariant("H", H, grad_H), angular(0), angular(1), angular(2)]
    return ConservativeSystem(
        "solar", 6 * n, rhs, InvariantSet.at(invs, y0), y0,
        separable=SeparableSplit(3 * n, grad_T, grad_V),
        params={"bodies": data.names},
    )


def linear_momentum(y: np.ndarray, n: int) -> np.ndarray:
    return y[3 * n:].reshape(n, 3).sum(axis=0)


# -- charged particle -------------------------------------------------------

def _uniform_potentials(x):
    R = np.hypot(x[0], x[1])
    if R < COLLISION_GUARD:
        raise CollisionError("particle reached the axis R = 0")
    A = np.array([-0.5 * x[1], 0.5 * x[0], 0.0])
    dA = np.array([[0.0, -0.5, 0.0], [0.5, 0.0, 0.0], [0.0, 0.0, 0.0]])
    phi = 1e-2 / R
    grad_phi = np.array([-1e-2 * x[0] / R**3, -1e-2 * x[1] / R**3, 0.0])
    return A, dA, phi, grad_phi


def _tokamak_potentials(x):
    X, Y, Z = x
    R2 = X * X + Y * Y
    R = np.sqrt(R2)
    if R < COLLISION_GUARD:
        raise CollisionError("particle reached the axis R = 0")
    R4 = R2 * R2
    R3 = R2 * R
    s = (1.0 - R) ** 2 + Z * Z
    A = np.array([
        X * Z / (2 * R2) - s * Y / (4 * R2),
        Y * Z / (2 * R2) + s * X / (4 * R2),
        -0.5 * np.log(R),
    ])
    Rm1 = R - 1.0
    # dA[i, j] = d A_i / d x_j
    dA = np.array([
        [
            Z / (2 * R2) - X * X * Z / R4 - Rm1 * X * Y / (2 * R3) + s * X * Y / (2 * R4),
            -X * Y * Z / R4 - Rm1 * Y * Y / (2 * R3) - s / (4 * R2) + s * Y * Y / (2 * R4),
            X / (2 * R2) - Z * Y / (2 * R2),
        ],
        [
            -X * Y * Z / R4 + Rm1 * X * X / (2 * R3) + s / (4 * R2) - s * X * X / (2 * R4),
            Z / (2 * R2) - Y * Y * Z / R4 + Rm1 * X * Y / (2 * R3) - s * X * Y / (2 * R4),
            Y / (2 * R2) + Z * X / (2 * R2),
        ],
        [-X / (2 * R2), -Y / (2 * R2), 0.0],
    ])
    return A, dA, 0.0, np.zeros(3)


_FIELDS = {"uniform": _uniform_potentials, "tokamak": _tokamak_potentials}

PARTICLE_DEFAULTS = {
    "uniform": ((0.0, -1.0, 0.0), (0.1, 0.01, 0.0)),
    "tokamak": ((1.05, 0.0, 0.0), (0.0, 4.816e-4, -2.059e-3)),
}


def charged_particle(field: str = "uniform", x0=None, v0=None) -> ConservativeSystem:
    """Canonical ``(x, p)`` charged-particle dynamics with ``q = m = 1``.

    ``H = |p - A(x)|^2 / 2 + phi(x)``; the azimuthal canonical momentum
    ``L = x p_y - y p_x`` is conserved by both (axisymmetric) fields.
    """
    try:
        potentials = _FIELDS[field]
    except KeyError:
        raise ValueError(f"unknown field {field!r}; valid: {list(_FIELDS)}") from None
    dx0, dv0 = PARTICLE_DEFAULTS[field]
    x0 = np.asarray(dx0 if x0 is None else x0, dtype=np.float64)
    v0 = np.asarray(dv0 if v0 is None else v0, dtype=np.float64)

    def rhs(y):
        x, p = y[:3], y[3:]
        A, dA, _, grad_phi = potentials(x)
        v = p - A
        return np.concatenate([v, dA.T @ v - grad_phi])

    def H(y):
        A, _, phi, _ = potentials(y[:3])
        v = y[3:] - A
        return 0.5 * float(v @ v) + phi

    def grad_H(y):
        A, dA, _, grad_phi = potentials(y[:3])
        v = y[3:] - A
        return np.concatenate([grad_phi - dA.T @ v, v])

    def L(y):
        return y[0] * y[4] - y[1] * y[3]

    def grad_L(y):
        return np.array([y[4], -y[3], 0.0, -y[1], y[0], 0.0])

    A0 = potentials(x0)[0]
    y0 = np.concatenate([x0, v0 + A0])
    invs = [Invariant("H", H, grad_H), Invariant("L", L, grad_L)]
    return ConservativeSystem(
        f"particle-{field}", 6, rhs, InvariantSet.at(invs, y0), y0,
        params={"field": field},
    )


def particle_velocity(system: ConservativeSystem, y: np.ndarray) -> np.ndarray:
    potentials = _FIELDS[system.params["field"]]
    return y[3:] - potentials(y[:3])[0]


# -- Stormer-Verlet ---------------------------------------------------------

def stormer_verlet_step(system: ConservativeSystem, y: np.ndarray, h: float) -> np.ndarray:
    """Kick-drift-kick Stormer-Verlet step for ``H = T(p) + V(q)``."""
    split = system.separable
    if split is None:
        raise TypeError(f"system {system.name!r} has no separable T(p) + V(q) split")
    n = split.n
    q, p = y[:n], y[n:]
    p_half = p - 0.5 * h * split.grad_potential(q)
    q_new = q + h * split.grad_kinetic(p_half)
    p_new = p_half - 0.5 * h * split.grad_potential(q_new)
    return np.concatenate([q_new, p_new])
