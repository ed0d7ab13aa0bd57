"""Randomised acoustic scenes and time-harmonic pressure simulation.

Scenes consist of three smooth spherical pistons on the ``z = 0`` plane, each
with its own image-source reflection plane and Gaussian spectral weight, plus an
optional incoming ambient field. Pressures are sampled on a spherical virtual
microphone array above the scene. Time convention is ``exp(i omega t)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .sphmath import (
    gauss_legendre,
    hankel_deriv_table,
    hankel_table,
    legendre_band_integral,
    legendre_table,
    n_coeffs,
    sph_harm_all,
    spherical_jn_table,
)

LMAX = 15
N_SOURCES = 3
DELTA_F = 192000.0 / 1024.0
CUBE_EDGE = 2.56
ARRAY_DISTANCE = 2.56
ARRAY_RADIUS = 0.175
# sound velocity level reference, m/s
VELOCITY_REF = 5e-8

AMBIENT_BASES = ("hankel1", "regular")


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReflectionPlane:
    """Plane ``{x : normal . x = offset}`` with a linear reflection factor."""

    normal: np.ndarray
    offset: float
    coefficient: float

    def side(self, point) -> float:
        return float(np.dot(self.normal, point) - self.offset)

    def mirror_point(self, point) -> np.ndarray:
        point = np.asarray(point, dtype=float)
        return point - 2.0 * self.side(point) * self.normal

    def mirror_direction(self, direction) -> np.ndarray:
        direction = np.asarray(direction, dtype=float)
        return direction - 2.0 * float(np.dot(self.normal, direction)) * self.normal


@dataclass(frozen=True)
class PistonSource:
    position: np.ndarray
    orientation: tuple[float, float]
    aperture: float
    radius: float
    velocity_amplitude: float
    spectral_center: float
    spectral_width: float
    reflection: ReflectionPlane

    @property
    def axis(self) -> np.ndarray:
        return direction_vector(*self.orientation)


@dataclass(frozen=True)
class AmbientField:
    """Incoming field coefficients in flat (l, m) layout, bounded by ``u(l)``."""

    coefficients: np.ndarray
    amplitude_bound: float

    @property
    def lmax(self) -> int:
        return int(round(math.sqrt(len(self.coefficients)))) - 1


@dataclass(frozen=True)
class AcousticModel:
    sources: tuple[PistonSource, ...]
    temperature: float
    level: float
    ambient: AmbientField
    seed: int = 0
    index: int = 0


@dataclass(frozen=True)
class ArrayGeometry:
    positions: np.ndarray

    @property
    def n_mics(self) -> int:
        return len(self.positions)

    @property
    def center(self) -> np.ndarray:
        return self.positions.mean(axis=0)


@dataclass(frozen=True)
class FrequencyGrid:
    bins: np.ndarray

    @classmethod
    def from_indices(cls, indices) -> "FrequencyGrid":
        return cls(bins=np.asarray(indices, dtype=float) * DELTA_F)

    @property
    def n_bins(self) -> int:
        return len(self.bins)


@dataclass(frozen=True)
class SimulationVariant:
    directivity: bool = False
    reflections: bool = False
    ambient: bool = False

    @property
    def flags(self) -> int:
        return int(self.directivity) | int(self.reflections) << 1 | int(self.ambient) << 2

    @classmethod
    def from_flags(cls, flags: int) -> "SimulationVariant":
        return cls(bool(flags & 1), bool(flags & 2), bool(flags & 4))


BASELINE = SimulationVariant()


def paper_array(n_mics: int = 48, radius: float = ARRAY_RADIUS,
                distance: float = ARRAY_DISTANCE) -> ArrayGeometry:
    """Fibonacci-sphere layout of ``n_mics`` points centred at (0, 0, distance)."""
    i = np.arange(n_mics) + 0.5
    z = 1.0 - 2.0 * i / n_mics
    golden = math.pi * (3.0 - math.sqrt(5.0))
    phi = golden * i
    rho = np.sqrt(1.0 - z * z)
    unit = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)
    # exact re-normalisation keeps |p - c| = radius to rounding
    unit /= np.linalg.norm(unit, axis=1, keepdims=True)
    return ArrayGeometry(positions=unit * radius + np.array([0.0, 0.0, distance]))


def paper_grid() -> FrequencyGrid:
    return FrequencyGrid.from_indices(range(10, 26))


# ---------------------------------------------------------------------------
# elementary physics
# ---------------------------------------------------------------------------


def environment(temperature: float) -> tuple[float, float]:
    """Speed of sound (m/s) and air density (kg/m^3) at ``temperature`` deg C."""
    if temperature <= -273.15:
        raise ValueError("temperature must be above absolute zero")
    c = 331.3 * math.sqrt(1.0 + temperature / 273.15)
    rho0 = 101325.0 / (287.058 * (temperature + 273.15))
    return c, rho0


def spectral_weight(f, f_c: float, f_w: float):
    if f_w <= 0:
        raise ValueError("spectral width must be positive")
    return np.exp(-0.5 * (np.asarray(f, dtype=float) - f_c) ** 2 / f_w**2)


def ambient_bound(l, u0: float, lmax: int = LMAX):
    """Magnitude bound ``u(l)`` for ambient coefficients of degree ``l``."""
    l = np.asarray(l, dtype=float)
    return u0 * np.exp(-(lmax + 1) * ((l + 1) ** 2 - 1) / ((lmax + 1) ** 2 - 1))


def direction_vector(theta: float, phi: float) -> np.ndarray:
    st = math.sin(theta)
    return np.array([st * math.cos(phi), st * math.sin(phi), math.cos(theta)])


def direction_angles(v) -> tuple[float, float]:
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v)
    theta = math.acos(min(1.0, max(-1.0, float(v[2]))))
    phi = math.atan2(float(v[1]), float(v[0])) % (2.0 * math.pi)
    return theta, phi


def to_spherical(points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    points = np.asarray(points, dtype=float)
    r = np.linalg.norm(points, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        theta = np.arccos(np.clip(points[..., 2] / r, -1.0, 1.0))
    theta = np.where(r > 0, theta, 0.0)
    phi = np.mod(np.arctan2(points[..., 1], points[..., 0]), 2.0 * math.pi)
    return r, theta, phi


def _degree_of_index(lmax: int) -> np.ndarray:
    return np.repeat(np.arange(lmax + 1), 2 * np.arange(lmax + 1) + 1)


def _lmax_of(coeffs) -> int:
    n = len(coeffs)
    lmax = int(round(math.sqrt(n))) - 1
    if (lmax + 1) ** 2 != n:
        raise ValueError(f"coefficient vector of length {n} is not a full (l, m) spectrum")
    return lmax


# ---------------------------------------------------------------------------
# piston spectra
# ---------------------------------------------------------------------------


def smooth_piston_profile(x, alpha: float, V: float):
    """Surface velocity of the smooth piston as a function of ``x = cos(theta)``."""
    if not 0.0 < alpha <= 2.0 * math.pi:
        raise ValueError("aperture must lie in (0, 2*pi]")
    x = np.asarray(x, dtype=float)
    if alpha <= math.pi:
        width = 1.0 - math.cos(alpha / 2.0)
        return V * np.exp(-((1.0 - x) ** 2) / width**2)
    w_pi = V * np.exp(-((1.0 - x) ** 2))
    return (2.0 * math.pi - alpha) / math.pi * w_pi + (alpha - math.pi) / math.pi * V


def smooth_piston_spectrum(alpha: float, V: float, lmax: int = LMAX, order: int = 64) -> np.ndarray:
    """Axisymmetric (m = 0) spectrum ``w_l0`` of the smooth piston, l = 0..lmax."""
    if not 0.0 < alpha <= 2.0 * math.pi:
        raise ValueError("aperture must lie in (0, 2*pi]")
    if alpha == 2.0 * math.pi:
        out = np.zeros(lmax + 1)
        out[0] = 2.0 * math.sqrt(math.pi) * V
        return out
    rule = gauss_legendre(order)
    profile = smooth_piston_profile(rule.nodes, alpha, V)
    p = legendre_table(lmax, rule.nodes)
    l = np.arange(lmax + 1)
    return np.sqrt((2 * l + 1) * math.pi) * (p @ (rule.weights * profile))


def cap_piston_spectrum(alpha: float, V: float, lmax: int = LMAX) -> np.ndarray:
    """Axisymmetric spectrum of the sharp-edged cap piston (reference path)."""
    if not 0.0 < alpha <= math.pi:
        raise ValueError("cap aperture must lie in (0, pi]")
    a = math.cos(alpha / 2.0)
    return np.array([
        V * math.sqrt((2 * l + 1) * math.pi) * legendre_band_integral(l, a)
        for l in range(lmax + 1)
    ])


def rotate_spectrum(coeffs, theta_t: float, phi_t: float) -> np.ndarray:
    """Rotate an m = 0 spectrum so its symmetry axis points to (theta_t, phi_t).

    Returns the full flat (l, m) spectrum.
    """
    coeffs = np.asarray(coeffs)
    lmax = len(coeffs) - 1
    l = _degree_of_index(lmax)
    y = sph_harm_all(lmax, theta_t, phi_t)
    out = np.sqrt(4.0 * math.pi / (2 * l + 1)) * np.conj(y) * coeffs[l]
    # degree 0 factor is exactly one; keep monopoles bit-identical under rotation
    out[0] = coeffs[0]
    return out


# ---------------------------------------------------------------------------
# pressure fields
# ---------------------------------------------------------------------------


def radiated_pressure(spectrum, r0: float, k: float, rho0: float, c: float, point) -> np.ndarray:
    """Pressure radiated by a vibrating sphere of radius ``r0`` with velocity spectrum.

    ``point`` is relative to the sphere centre, shape ``(3,)`` or ``(..., 3)``.
    """
    spectrum = np.asarray(spectrum)
    lmax = _lmax_of(spectrum)
    if k <= 0:
        raise ValueError("wavenumber must be positive")
    r, theta, phi = to_spherical(point)
    if np.any(r <= r0):
        raise ValueError("evaluation point lies inside or on the source sphere")
    return _radiated(spectrum, r0, k, rho0, c, r, sph_harm_all(lmax, theta, phi))


def _radiated(spectrum, r0, k, rho0, c, r, y):
    lmax = _lmax_of(spectrum)
    h = hankel_table(lmax, k * r, 2)
    dh0 = hankel_deriv_table(lmax, np.array([k * r0]), 2)[:, 0]
    radial = h / dh0.reshape((-1,) + (1,) * r.ndim)
    l = _degree_of_index(lmax)
    return -1j * rho0 * c * (np.moveaxis(radial[l], 0, -1) * y * spectrum).sum(axis=-1)


def reflected_pressure(source: PistonSource, spectrum_m0, k: float, rho0: float, c: float,
                       points, array_center=(0.0, 0.0, ARRAY_DISTANCE),
                       directivity: bool = True) -> np.ndarray:
    """Image-source contribution of ``source``'s reflection plane at ``points``.

    ``spectrum_m0`` is the axisymmetric spectrum of the source (as used for the
    direct path). Zero unless the source and the array centre are on the same
    side of the plane.
    """
    points = np.asarray(points, dtype=float)
    plane = source.reflection
    if plane.coefficient == 0.0:
        return np.zeros(points.shape[:-1], dtype=complex)
    s_src = plane.side(source.position)
    s_arr = plane.side(np.asarray(array_center, dtype=float))
    if s_src * s_arr <= 0.0:
        return np.zeros(points.shape[:-1], dtype=complex)
    image = plane.mirror_point(source.position)
    if directivity:
        spectrum = rotate_spectrum(spectrum_m0, *direction_angles(plane.mirror_direction(source.axis)))
    else:
        spectrum = _monopole_full(spectrum_m0)
    return plane.coefficient * radiated_pressure(spectrum, source.radius, k, rho0, c, points - image)


def ambient_pressure(field: AmbientField, k: float, point, basis: str = "hankel1",
                     coefficients=None) -> np.ndarray:
    """Incoming ambient field ``sum a_lm h_l^(1)(kr) Y_l^m`` (or regular ``j_l`` basis)."""
    if basis not in AMBIENT_BASES:
        raise ValueError(f"unknown ambient basis {basis!r}")
    coeffs = np.asarray(field.coefficients if coefficients is None else coefficients)
    lmax = _lmax_of(coeffs)
    r, theta, phi = to_spherical(point)
    if np.any(r <= 0):
        raise ValueError("ambient field is singular at the origin")
    if basis == "hankel1":
        radial = hankel_table(lmax, k * r, 1)
    else:
        radial = spherical_jn_table(lmax, k * r).astype(complex)
    y = sph_harm_all(lmax, theta, phi)
    l = _degree_of_index(lmax)
    return (np.moveaxis(radial[l], 0, -1) * y * coeffs).sum(axis=-1)


def ambient_pressure_scale(k: float, rho0: float, c: float,
                           reference_distance: float = ARRAY_DISTANCE) -> float:
    """Pa per (m/s) of ambient coefficient.

    Ambient coefficients are sampled as particle velocities; this factor turns
    them into pressures whose degree-0 term has velocity amplitude
    ``|a_00| / sqrt(4 pi)`` at the array distance (plane-wave impedance rho0*c,
    radial decay 1/(kr) compensated by kr).
    """
    return rho0 * c * k * reference_distance


def _monopole_full(spectrum_m0) -> np.ndarray:
    spectrum_m0 = np.asarray(spectrum_m0)
    out = np.zeros(n_coeffs(len(spectrum_m0) - 1), dtype=complex)
    out[0] = spectrum_m0[0]
    return out


# ---------------------------------------------------------------------------
# random scenes
# ---------------------------------------------------------------------------

_TAGS = {"model": 0, "ambient": 1}


def _rng(seed: int, index: int, tag: str) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(int(index), _TAGS[tag]))
    return np.random.default_rng(ss)


def _uniform_direction(rng: np.random.Generator) -> tuple[float, float]:
    cos_t = rng.uniform(-1.0, 1.0)
    phi = rng.uniform(0.0, 2.0 * math.pi)
    return math.acos(cos_t), phi


def sample_model(seed: int, index: int, lmax: int = LMAX,
                 ambient_margin_db: tuple[float, float] = (10.0, 20.0)) -> AcousticModel:
    """Deterministically draw scene ``index`` of the model set identified by ``seed``."""
    rng = _rng(seed, index, "model")
    half = CUBE_EDGE / 2.0
    level = rng.uniform(35.0, 85.0)
    temperature = rng.normal(20.0, 2.5)
    sources = []
    for _ in range(N_SOURCES):
        position = np.array([rng.uniform(-half, half), rng.uniform(-half, half), 0.0])
        orientation = _uniform_direction(rng)
        aperture = rng.uniform(1.5 * math.pi, 2.0 * math.pi)
        radius = rng.uniform(0.1, 0.3)
        v_level = level - rng.uniform(0.0, 15.0)
        V = VELOCITY_REF * 10.0 ** (v_level / 20.0)
        f_c = rng.uniform(4.0 * DELTA_F, 35.0 * DELTA_F)
        f_w = rng.uniform(0.5 * DELTA_F, 64.0 * DELTA_F)
        normal = direction_vector(*_uniform_direction(rng))
        offset = rng.uniform(-3.0, 3.0)
        coefficient = 10.0 ** (rng.uniform(-15.0, -3.0) / 20.0)
        sources.append(PistonSource(
            position=position, orientation=orientation, aperture=aperture, radius=radius,
            velocity_amplitude=V, spectral_center=f_c, spectral_width=f_w,
            reflection=ReflectionPlane(normal=normal, offset=offset, coefficient=coefficient),
        ))
    ambient = sample_ambient(_rng(seed, index, "ambient"), level, lmax, ambient_margin_db)
    return AcousticModel(sources=tuple(sources), temperature=temperature, level=level,
                         ambient=ambient, seed=seed, index=index)


def sample_ambient(rng: np.random.Generator, level: float, lmax: int = LMAX,
                   margin_db: tuple[float, float] = (10.0, 20.0)) -> AmbientField:
    lo, hi = margin_db
    if lo < 10.0:
        raise ValueError("ambient level must be at least 10 dB below the model level")
    u0 = VELOCITY_REF * 10.0 ** ((level - rng.uniform(lo, hi)) / 20.0)
    bound = ambient_bound(_degree_of_index(lmax), u0, lmax)
    mag = rng.uniform(0.0, 1.0, size=bound.shape) * bound
    phase = rng.uniform(0.0, 2.0 * math.pi, size=bound.shape)
    return AmbientField(coefficients=mag * np.exp(1j * phase), amplitude_bound=u0)


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


def simulate_pressures(model: AcousticModel, array: ArrayGeometry, grid: FrequencyGrid,
                       variant: SimulationVariant, lmax: int = LMAX,
                       ambient_basis: str = "hankel1") -> np.ndarray:
    """Complex pressures at every microphone and bin, shape ``(n_mics, n_bins)``.

    Per bin: each source's direct field (monopole when directivity is off)
    plus its image-source reflection when enabled, weighted by the source's
    spectral weight; then the ambient field when enabled.
    """
    c, rho0 = environment(model.temperature)
    mics = np.asarray(array.positions, dtype=float)
    center = array.center
    ks = 2.0 * math.pi * np.asarray(grid.bins, dtype=float) / c
    out = np.zeros((len(mics), grid.n_bins), dtype=complex)
    for src in model.sources:
        alpha = src.aperture if variant.directivity else 2.0 * math.pi
        spec0 = smooth_piston_spectrum(alpha, src.velocity_amplitude, lmax)
        if variant.directivity:
            spec = rotate_spectrum(spec0, *src.orientation)
        else:
            spec = _monopole_full(spec0)
        paths = [(spec, mics - src.position, 1.0)]
        plane = src.reflection
        if (variant.reflections and plane.coefficient != 0.0
                and plane.side(src.position) * plane.side(center) > 0.0):
            if variant.directivity:
                img_spec = rotate_spectrum(spec0, *direction_angles(plane.mirror_direction(src.axis)))
            else:
                img_spec = spec
            paths.append((img_spec, mics - plane.mirror_point(src.position), plane.coefficient))
        weights = spectral_weight(grid.bins, src.spectral_center, src.spectral_width)
        for sp, rel, gain in paths:
            r, theta, phi = to_spherical(rel)
            if np.any(r <= src.radius):
                raise ValueError("microphone inside a source sphere")
            y = sph_harm_all(lmax, theta, phi)
            for b, k in enumerate(ks):
                out[:, b] += weights[b] * (gain * _radiated(sp, src.radius, k, rho0, c, r, y))
    if variant.ambient:
        for b, k in enumerate(ks):
            scale = ambient_pressure_scale(k, rho0, c)
            out[:, b] += ambient_pressure(model.ambient, k, mics, ambient_basis,
                                          coefficients=scale * model.ambient.coefficients)
    return out


def with_sources(model: AcousticModel, sources) -> AcousticModel:
    """Copy of ``model`` with a different source list (used for superposition checks)."""
    return replace(model, sources=tuple(sources))


# ---------------------------------------------------------------------------
# model-set export
# ---------------------------------------------------------------------------

MODELSET_HEADER = "# modelset v1"
_SOURCE_FIELDS = ("x", "y", "z", "theta", "phi", "alpha", "r0", "V", "f_c", "f_w",
                  "n_x", "n_y", "n_z", "offset", "coefficient")


def _fmt(v) -> str:
    return repr(float(v))


def format_models(models) -> str:
    """Plain-text table: a ``model`` line, one ``source`` line per source, one ``ambient`` line.

    ``model <index> <seed> <temperature> <level> <n_sources> <u0>``;
    ``source`` lines carry position, axis angles, aperture, radius, V, f_c, f_w,
    plane normal, offset and reflection coefficient; the ``ambient`` line holds
    interleaved real/imaginary coefficients. Floats use round-trip repr, so a
    parsed model set simulates bit-identically.
    """
    lines = [MODELSET_HEADER, "# source: " + " ".join(_SOURCE_FIELDS)]
    for m in models:
        lines.append(" ".join(["model", str(m.index), str(m.seed), _fmt(m.temperature), _fmt(m.level),
                               str(len(m.sources)), _fmt(m.ambient.amplitude_bound)]))
        for s in m.sources:
            vals = [*s.position, *s.orientation, s.aperture, s.radius, s.velocity_amplitude,
                    s.spectral_center, s.spectral_width, *s.reflection.normal,
                    s.reflection.offset, s.reflection.coefficient]
            lines.append("source " + " ".join(_fmt(v) for v in vals))
        ri = np.column_stack([m.ambient.coefficients.real, m.ambient.coefficients.imag]).ravel()
        lines.append("ambient " + " ".join(_fmt(v) for v in ri))
    return "\n".join(lines) + "\n"


def parse_models(text: str) -> list[AcousticModel]:
    """Inverse of :func:`format_models`."""
    out = []
    lines = [(i + 1, ln.split()) for i, ln in enumerate(text.splitlines())
             if ln.strip() and not ln.lstrip().startswith("#")]
    pos = 0
    while pos < len(lines):
        lineno, tok = lines[pos]
        if tok[0] != "model" or len(tok) != 7:
            raise ValueError(f"line {lineno}: expected a model header")
        index, seed, n_src = int(tok[1]), int(tok[2]), int(tok[5])
        temperature, level, u0 = float(tok[3]), float(tok[4]), float(tok[6])
        sources = []
        for k in range(n_src):
            lineno, st = lines[pos + 1 + k]
            if st[0] != "source" or len(st) != 1 + len(_SOURCE_FIELDS):
                raise ValueError(f"line {lineno}: expected a source line")
            v = [float(t) for t in st[1:]]
            sources.append(PistonSource(
                position=np.array(v[0:3]), orientation=(v[3], v[4]), aperture=v[5], radius=v[6],
                velocity_amplitude=v[7], spectral_center=v[8], spectral_width=v[9],
                reflection=ReflectionPlane(normal=np.array(v[10:13]), offset=v[13], coefficient=v[14]),
            ))
        lineno, at = lines[pos + 1 + n_src]
        if at[0] != "ambient" or (len(at) - 1) % 2:
            raise ValueError(f"line {lineno}: expected an ambient line")
        ri = np.array([float(t) for t in at[1:]]).reshape(-1, 2)
        ambient = AmbientField(coefficients=ri[:, 0] + 1j * ri[:, 1], amplitude_bound=u0)
        out.append(AcousticModel(sources=tuple(sources), temperature=temperature, level=level,
                                 ambient=ambient, seed=seed, index=index))
        pos += 2 + n_src
    return out
