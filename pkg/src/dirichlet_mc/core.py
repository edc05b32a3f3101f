"""Sample containers, the provider contract and reproducible random streams.

Simulators return *batches*: stacked numpy arrays of N independent draws.
A single draw (``TripletSample`` / ``ExtendedSample``) can be pulled out of a
batch by indexing, and a list of single draws can be stacked back into a
batch with :func:`stack_triplets` / :func:`stack_extended`.
"""

from __future__ import annotations

import abc
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

PSD_TOL = 1e-9

# Each chunk of a batch draws from its own substream, so the result does not
# depend on how chunks are spread over workers.
DEFAULT_CHUNK = 1 << 14


class SimulationError(RuntimeError):
    """Raised when a simulated state becomes non-finite or explodes."""


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RngStream:
    """Address of an independent random stream: ``(seed, worker, index)``."""

    seed: int
    worker: int = 0
    index: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(
            entropy=self.seed, spawn_key=(self.worker, self.index)
        )
        return np.random.Generator(np.random.Philox(ss))

    def child(self, index: int) -> "RngStream":
        """Substream ``index`` nested under this stream's worker slot."""
        return derive_substream(self.seed, self.worker, self.index * (1 << 20) + index)


def derive_substream(seed: int, worker: int, index: int) -> RngStream:
    if seed < 0 or worker < 0 or index < 0:
        raise ValueError("seed, worker and index must be non-negative")
    return RngStream(int(seed), int(worker), int(index))


# ---------------------------------------------------------------------------
# Samples
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TripletSample:
    x: np.ndarray
    gamma: np.ndarray
    a: np.ndarray

    @property
    def d(self) -> int:
        return self.x.shape[0]


@dataclass(frozen=True)
class ExtendedSample:
    base: TripletSample
    gamma_gamma: float
    payload_g: Optional[float] = None
    gamma_xg: Optional[float] = None

    def __post_init__(self):
        if self.base.d != 1:
            raise ValueError("ExtendedSample requires a scalar X")
        if self.payload_g is not None and self.gamma_xg is None:
            raise ValueError("payload_g given without gamma_xg")

    def gamma_inv(self, eps: float) -> float:
        """Γ[X, 1/(eps + Γ[X])] by the chain rule."""
        g = float(self.base.gamma[0, 0])
        return -self.gamma_gamma / (eps + g) ** 2


@dataclass(frozen=True)
class TripletBatch:
    """N draws of (X, Γ[X], A[X]); shapes (N, d), (N, d, d), (N, d)."""

    x: np.ndarray
    gamma: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        n, d = self.x.shape
        if self.gamma.shape != (n, d, d) or self.a.shape != (n, d):
            raise ValueError(
                f"inconsistent shapes x{self.x.shape} gamma{self.gamma.shape} a{self.a.shape}"
            )

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def __len__(self):
        return self.n

    def __getitem__(self, i: int) -> TripletSample:
        return TripletSample(self.x[i].copy(), self.gamma[i].copy(), self.a[i].copy())

    def scalar(self):
        """``(x, gamma, a)`` as 1-d arrays; only for d = 1."""
        if self.d != 1:
            raise ValueError("scalar view requires d = 1")
        return self.x[:, 0], self.gamma[:, 0, 0], self.a[:, 0]


@dataclass(frozen=True)
class ExtendedBatch:
    """N scalar draws with Γ[X, Γ[X]] and an optional payload G.

    Only Γ[X, Γ[X]] is stored; Γ[X, 1/(eps+Γ[X])] is derived per eps by
    :meth:`gamma_inv`.
    """

    x: np.ndarray
    gamma: np.ndarray
    a: np.ndarray
    gamma_gamma: np.ndarray
    payload_g: Optional[np.ndarray] = None
    gamma_xg: Optional[np.ndarray] = None

    def __post_init__(self):
        n = self.x.shape[0]
        for name in ("x", "gamma", "a", "gamma_gamma"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have shape ({n},)")
        if (self.payload_g is None) != (self.gamma_xg is None):
            raise ValueError("payload_g and gamma_xg must be given together")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def __len__(self):
        return self.n

    @property
    def degenerate(self) -> np.ndarray:
        return self.gamma <= 0.0

    @property
    def has_payload(self) -> bool:
        return self.payload_g is not None

    def gamma_inv(self, eps: float) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return -self.gamma_gamma / (eps + self.gamma) ** 2

    def triplets(self) -> TripletBatch:
        return TripletBatch(self.x[:, None], self.gamma[:, None, None], self.a[:, None])

    def with_payload(self, g: Callable, g_prime: Callable) -> "ExtendedBatch":
        """Attach G = g(X); then Γ[X, G] = g'(X) Γ[X]."""
        return ExtendedBatch(
            self.x, self.gamma, self.a, self.gamma_gamma,
            payload_g=np.asarray(g(self.x), dtype=float) * np.ones_like(self.x),
            gamma_xg=np.asarray(g_prime(self.x), dtype=float) * self.gamma,
        )

    def __getitem__(self, i: int) -> ExtendedSample:
        base = TripletSample(
            np.array([self.x[i]]), np.array([[self.gamma[i]]]), np.array([self.a[i]])
        )
        if self.has_payload:
            return ExtendedSample(
                base, float(self.gamma_gamma[i]),
                float(self.payload_g[i]), float(self.gamma_xg[i]),
            )
        return ExtendedSample(base, float(self.gamma_gamma[i]))


def stack_triplets(samples: Sequence[TripletSample]) -> TripletBatch:
    if not samples:
        raise ValueError("no samples")
    return TripletBatch(
        np.stack([s.x for s in samples]),
        np.stack([s.gamma for s in samples]),
        np.stack([s.a for s in samples]),
    )


def stack_extended(samples: Sequence[ExtendedSample]) -> ExtendedBatch:
    if not samples:
        raise ValueError("no samples")
    with_payload = [s.payload_g is not None for s in samples]
    if any(with_payload) and not all(with_payload):
        raise ValueError("mixed payload presence")
    return ExtendedBatch(
        np.array([s.base.x[0] for s in samples]),
        np.array([s.base.gamma[0, 0] for s in samples]),
        np.array([s.base.a[0] for s in samples]),
        np.array([s.gamma_gamma for s in samples]),
        np.array([s.payload_g for s in samples]) if all(with_payload) else None,
        np.array([s.gamma_xg for s in samples]) if all(with_payload) else None,
    )


def concat_triplets(parts: Sequence[TripletBatch]) -> TripletBatch:
    return TripletBatch(
        np.concatenate([p.x for p in parts]),
        np.concatenate([p.gamma for p in parts]),
        np.concatenate([p.a for p in parts]),
    )


def concat_extended(parts: Sequence[ExtendedBatch]) -> ExtendedBatch:
    payload = parts[0].has_payload
    return ExtendedBatch(
        np.concatenate([p.x for p in parts]),
        np.concatenate([p.gamma for p in parts]),
        np.concatenate([p.a for p in parts]),
        np.concatenate([p.gamma_gamma for p in parts]),
        np.concatenate([p.payload_g for p in parts]) if payload else None,
        np.concatenate([p.gamma_xg for p in parts]) if payload else None,
    )


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass
class ValidationReport:
    passed: bool
    asymmetry: float
    min_eigenvalue: float
    has_nan: bool
    n_failed: int = 0

    def __bool__(self):
        return self.passed


def validate_triplet(s, tol: float = PSD_TOL) -> ValidationReport:
    """Check symmetry, positive semi-definiteness and finiteness of a draw.

    Accepts a single :class:`TripletSample` or a :class:`TripletBatch`; for
    a batch the worst asymmetry/eigenvalue over all draws is reported.
    """
    if tol < 0:
        raise ValueError("tol must be >= 0")
    gamma = np.asarray(s.gamma, dtype=float)
    if gamma.ndim == 2:
        gamma = gamma[None]
        x, a = np.atleast_2d(s.x), np.atleast_2d(s.a)
    else:
        x, a = s.x, s.a
    finite = (
        np.isfinite(x).all(axis=-1)
        & np.isfinite(a).all(axis=-1)
        & np.isfinite(gamma).all(axis=(-1, -2))
    )
    asym = np.abs(gamma - np.swapaxes(gamma, -1, -2)).max(axis=(-1, -2))
    sym = 0.5 * (gamma + np.swapaxes(gamma, -1, -2))
    sym = np.where(finite[:, None, None], sym, 0.0)
    min_eig = np.linalg.eigvalsh(sym)[:, 0]
    ok = finite & (asym <= tol) & (min_eig >= -tol)
    return ValidationReport(
        passed=bool(ok.all()),
        asymmetry=float(asym.max()),
        min_eigenvalue=float(min_eig.min()),
        has_nan=bool(not finite.all()),
        n_failed=int((~ok).sum()),
    )


# ---------------------------------------------------------------------------
# Providers
# ---------------------------------------------------------------------------


class StructureProvider(abc.ABC):
    """Something that simulates X together with Γ[X] and A[X].

    Subclasses implement :meth:`_triplet_chunk` (and, if they advertise the
    ``extended`` capability, :meth:`_extended_chunk`) for one chunk drawn
    from a single generator. :meth:`sample` splits a request into
    fixed-size chunks addressed by substream index, so the output is
    bit-identical whatever the worker count.
    """

    dim: int = 1
    capabilities: frozenset = frozenset({"triplet"})

    def density(self, x):
        """Exact density of X for validation models, else NotImplementedError."""
        raise NotImplementedError(f"{type(self).__name__} has no known density")

    @property
    def has_density(self) -> bool:
        return "known_density" in self.capabilities

    @abc.abstractmethod
    def _triplet_chunk(self, n: int, rng: np.random.Generator) -> TripletBatch: ...

    def _extended_chunk(self, n: int, rng: np.random.Generator) -> ExtendedBatch:
        raise NotImplementedError(f"{type(self).__name__} is not extended-capable")

    def sample(self, n: int, stream: RngStream, workers: int = 1,
               chunk: int = DEFAULT_CHUNK) -> TripletBatch:
        return _chunked(self._triplet_chunk, n, stream, workers, chunk, concat_triplets)

    def sample_extended(self, n: int, stream: RngStream, workers: int = 1,
                        chunk: int = DEFAULT_CHUNK) -> ExtendedBatch:
        if "extended" not in self.capabilities:
            raise NotImplementedError(f"{type(self).__name__} is not extended-capable")
        return _chunked(self._extended_chunk, n, stream, workers, chunk, concat_extended)


def _chunked(fn, n, stream, workers, chunk, concat):
    if n < 1:
        raise ValueError("n must be >= 1")
    sizes = [chunk] * (n // chunk)
    if n % chunk:
        sizes.append(n % chunk)

    def run(j):
        return fn(sizes[j], stream.child(j).generator())

    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(j) for j in range(len(sizes))]
    return parts[0] if len(parts) == 1 else concat(parts)


@dataclass
class ProductProvider(StructureProvider):
    """Independent copies of a scalar provider stacked into a vector X.

    Γ is block diagonal and A is the concatenation, as for a product
    error structure.
    """

    factor: StructureProvider
    copies: int = 2
    capabilities: frozenset = field(init=False)

    def __post_init__(self):
        if self.factor.dim != 1:
            raise ValueError("factor must be scalar")
        self.dim = self.copies
        caps = {"triplet"}
        if self.factor.has_density:
            caps.add("known_density")
        self.capabilities = frozenset(caps)

    def density(self, x):
        x = np.atleast_2d(x)
        return np.prod(self.factor.density(x), axis=-1)

    def _triplet_chunk(self, n, rng):
        parts = [self.factor._triplet_chunk(n, rng) for _ in range(self.copies)]
        x = np.concatenate([p.x for p in parts], axis=1)
        a = np.concatenate([p.a for p in parts], axis=1)
        gamma = np.zeros((n, self.copies, self.copies))
        for i, p in enumerate(parts):
            gamma[:, i, i] = p.gamma[:, 0, 0]
        return TripletBatch(x, gamma, a)
