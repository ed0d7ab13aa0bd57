"""Cross-spectral matrices, their normalisation, and the slice-weighted distance.

A CSM tensor is a complex array of shape ``(n_mics, n_mics, n_bins)``; slice
``k`` is the cross-spectral matrix at frequency bin ``k``. Batched helpers take a
leading sample axis, ``(N, n_mics, n_mics, n_bins)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator

import numpy as np

KAPPA = 0.9

__all__ = [
    "KAPPA",
    "SliceMetricParams",
    "build_csm",
    "normalize_slices",
    "hermitianize",
    "slice_distance",
    "csm_distance",
    "csm_distance_batch",
    "csm_distance_grad",
    "accuracy",
    "CsmRecord",
    "write_csmd",
    "read_csmd",
]


@dataclass(frozen=True)
class SliceMetricParams:
    kappa: float = KAPPA
    K: int = 16

    def __post_init__(self):
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError("kappa must lie in [0, 1]")


def _kappa(params) -> float:
    if params is None:
        return KAPPA
    if isinstance(params, SliceMetricParams):
        return params.kappa
    return float(params)


def build_csm(P) -> np.ndarray:
    """Single-snapshot CSM: slice k is the outer product ``p_k p_k^H``.

    ``P`` has shape ``(n_mics, n_bins)`` (or a leading batch axis).
    """
    P = np.asarray(P, dtype=complex)
    if not np.all(np.isfinite(P)):
        raise ValueError("pressures must be finite")
    # explicit real arithmetic: C_ji is then exactly conj(C_ij) and the diagonal exactly real
    pr_i, pi_i = P.real[..., :, None, :], P.imag[..., :, None, :]
    pr_j, pi_j = P.real[..., None, :, :], P.imag[..., None, :, :]
    out = np.empty(P.shape[:-1] + P.shape[-2:], dtype=complex)
    out.real = pr_i * pr_j + pi_i * pi_j
    out.imag = pi_i * pr_j - pr_i * pi_j
    return out


def _slice_sq_norms(C) -> np.ndarray:
    return (C.real**2 + C.imag**2).sum(axis=(-3, -2))


def normalize_slices(C) -> np.ndarray:
    """Scale each frequency slice to unit Frobenius norm; zero slices stay zero."""
    C = np.asarray(C, dtype=complex)
    norms = np.sqrt(_slice_sq_norms(C))
    safe = np.where(norms > 0.0, norms, 1.0)
    return C / safe[..., None, None, :]


def hermitianize(C) -> np.ndarray:
    """``(C + C^H) / 2`` per frequency slice."""
    C = np.asarray(C, dtype=complex)
    return 0.5 * (C + np.conj(np.swapaxes(C, -3, -2)))


def _slice_terms(a, b):
    """Per-slice squared norms and real trace of ``a @ b``.

    Re tr(a b) = sum_ij Re(a_ij b_ji), evaluated in real arithmetic so that
    for Hermitian ``a`` it reproduces ``|a|^2`` bit for bit.
    """
    bt = np.swapaxes(b, -3, -2)
    tr = np.ascontiguousarray(a.real * bt.real - a.imag * bt.imag).sum(axis=(-3, -2))
    return _slice_sq_norms(a), _slice_sq_norms(b), tr


def _distance_from_terms(na2, nb2, tr, kappa):
    na = np.sqrt(na2)
    nb = np.sqrt(nb2)
    denom = np.sqrt(na2 * nb2)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.where(denom > 0.0, tr / np.where(denom > 0.0, denom, 1.0), 0.0)
    both_zero = (na2 == 0.0) & (nb2 == 0.0)
    d = kappa * (1.0 - corr) + (1.0 - kappa) * np.abs(na - nb)
    return np.where(both_zero, 0.0, d)


def slice_distance(m_a, m_b, params=None) -> float:
    """Weighted correlation-matrix distance between two square matrices.

    ``kappa * (1 - tr(a b) / (|a| |b|)) + (1 - kappa) * | |a| - |b| |`` with
    Frobenius norms. A zero matrix against a nonzero one counts as fully
    uncorrelated; two zero matrices are at distance 0.
    """
    a = np.asarray(m_a, dtype=complex)[..., None]
    b = np.asarray(m_b, dtype=complex)[..., None]
    na2, nb2, tr = _slice_terms(a, b)
    return float(_distance_from_terms(na2, nb2, tr, _kappa(params))[0])


def csm_distance(a, b, params=None) -> float:
    """Mean slice distance over the frequency axis."""
    return float(csm_distance_batch(np.asarray(a)[None], np.asarray(b)[None], params)[0])


def csm_distance_batch(a, b, params=None) -> np.ndarray:
    """``csm_distance`` for each pair along a leading batch axis."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    na2, nb2, tr = _slice_terms(a, b)
    return _distance_from_terms(na2, nb2, tr, _kappa(params)).mean(axis=-1)


def csm_distance_grad(a, b, params=None) -> np.ndarray:
    """Gradient of ``csm_distance_batch(a, b)`` with respect to ``b``.

    Returned as ``dL/dRe(b) + 1j * dL/dIm(b)`` with the batch layout of ``b``.
    Slices where ``b`` is zero contribute no correlation gradient.
    """
    kappa = _kappa(params)
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    n_bins = b.shape[-1]
    na2, nb2, tr = _slice_terms(a, b)
    na, nb = np.sqrt(na2), np.sqrt(nb2)
    ok = (na > 0.0) & (nb > 0.0)
    na_s = np.where(ok, na, 1.0)
    nb_s = np.where(ok, nb, 1.0)
    # d tr / d b_ji = a_ij  (real part of a_ij b_ji), so the gradient w.r.t. b is a^T conjugated in imag
    dtr = np.conj(np.swapaxes(a, -3, -2))
    c_tr = np.where(ok, -kappa / (na_s * nb_s), 0.0)
    c_nb = np.where(ok, kappa * tr / (na_s * nb_s**3), 0.0)
    sign = np.sign(nb - na)
    nb_pos = nb > 0.0
    c_norm = np.where(nb_pos, (1.0 - kappa) * sign / np.where(nb_pos, nb, 1.0), 0.0)
    g = c_tr[..., None, None, :] * dtr + (c_nb + c_norm)[..., None, None, :] * b
    return g / n_bins


def accuracy(G_output, target, params=None) -> float:
    """``1 - csm_distance(target, G_output)``."""
    return 1.0 - csm_distance(target, G_output, params)


# ---------------------------------------------------------------------------
# CSMD container
# ---------------------------------------------------------------------------

MAGIC = b"CSMD"
VERSION = 1
_HEADER = struct.Struct("<4sI3IQ")
_RECORD = struct.Struct("<QI")


@dataclass(frozen=True)
class CsmRecord:
    model_index: int
    flags: int
    data: np.ndarray


def write_csmd(path, records: Iterable[CsmRecord], dims=None) -> int:
    """Write records to a CSMD file; returns the record count."""
    records = list(records)
    if dims is None:
        if not records:
            raise ValueError("dims required for an empty container")
        dims = records[0].data.shape
    dims = tuple(int(d) for d in dims)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, *dims, len(records)))
        for rec in records:
            data = np.asarray(rec.data, dtype=complex)
            if data.shape != dims:
                raise ValueError(f"record shape {data.shape} does not match {dims}")
            fh.write(_RECORD.pack(int(rec.model_index), int(rec.flags)))
            fh.write(np.ascontiguousarray(data).astype("<c16").tobytes())
    return len(records)


def _read_header(fh: BinaryIO):
    raw = fh.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise ValueError("truncated CSMD header")
    magic, version, n0, n1, n2, count = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise ValueError(f"not a CSMD file (magic {magic!r})")
    if version != VERSION:
        raise ValueError(f"unsupported CSMD version {version}")
    return (n0, n1, n2), count


def iter_csmd(path) -> Iterator[CsmRecord]:
    with open(path, "rb") as fh:
        dims, count = _read_header(fh)
        nbytes = 16 * int(np.prod(dims))
        for _ in range(count):
            head = fh.read(_RECORD.size)
            body = fh.read(nbytes)
            if len(head) != _RECORD.size or len(body) != nbytes:
                raise ValueError("truncated CSMD record")
            idx, flags = _RECORD.unpack(head)
            data = np.frombuffer(body, dtype="<c16").reshape(dims).astype(complex)
            yield CsmRecord(idx, flags, data)


def read_csmd(path) -> list[CsmRecord]:
    return list(iter_csmd(Path(path)))
