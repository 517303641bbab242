"""Piecewise-polynomial signals for SFMIPA.

Every trajectory of the model (rates, cumulative arrivals, buffer content,
mode indicators and all IPA derivatives) is piecewise polynomial of degree
at most two. A ``PiecewiseSignal`` stores such a trajectory segment by
segment in local coordinates, evaluates it exactly (right-continuous, with
explicit left limits), integrates it in closed form and inverts it when it
is increasing. The module also hosts the root-isolation helpers used for
event detection.
"""

import bisect
import logging
import math
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from sfmipa.exceptions import SignalDomainError

logger = logging.getLogger(__name__)

Coefficients = Tuple[float, float, float]

_EPS = np.finfo(float).eps

# Segments are dropped from the front of a pruned signal only in batches of
# at least this many, keeping list slicing amortized.
PRUNE_BATCH = 512


def shift_polynomial(c0: float, c1: float, c2: float, d: float) -> Coefficients:
    """Re-express c0 + c1*s + c2*s**2 in the coordinate u = s - d.

    Args:
        c0, c1, c2: Coefficients in the original local coordinate.
        d: Offset of the new origin.

    Returns:
        Coefficients of the same polynomial around the new origin.
    """
    return (c0 + d * (c1 + d * c2), c1 + 2.0 * c2 * d, c2)


def quadratic_roots(c0: float, c1: float, c2: float) -> List[float]:
    """Real roots of c0 + c1*u + c2*u**2, sorted ascending.

    Uses the cancellation-free form of the quadratic formula. A polynomial
    that is identically zero has no isolated roots and returns ``[]``.
    """
    if c2 == 0.0:
        if c1 == 0.0:
            return []
        return [-c0 / c1]
    disc = c1 * c1 - 4.0 * c2 * c0
    if disc < 0.0:
        # Tangency lost to rounding
        if disc > -64.0 * _EPS * c1 * c1:
            return [-c1 / (2.0 * c2)]
        return []
    sq = math.sqrt(disc)
    q = -0.5 * (c1 + math.copysign(sq, c1))
    if q == 0.0:
        return [0.0]
    roots = [q / c2, c0 / q]
    roots.sort()
    return roots


def first_crossing(
    coefs: Coefficients,
    length: float,
    direction: int,
    value_tol: float,
    slope_tol: float,
) -> Optional[float]:
    """Locate the first directed zero crossing of a quadratic guard.

    The guard is g(u) = c0 + c1*u + c2*u**2 on the local window [0, length].
    ``direction`` is +1 for a crossing from below (g becomes positive) and
    -1 for a crossing from above. A guard that is already on the far side of
    zero at u = 0, or that sits on zero and is leaving in the crossing
    direction, fires immediately at u = 0.

    Args:
        coefs: Local coefficients of the guard.
        length: Width of the window (may be ``inf``).
        direction: +1 or -1.
        value_tol: Magnitude below which g(0) counts as zero.
        slope_tol: Magnitude below which the first derivative counts as zero.

    Returns:
        Local crossing coordinate, or ``None`` when the window has no crossing.
    """
    c0, c1, c2 = (direction * c for c in coefs)
    if c0 > value_tol:
        return 0.0
    if abs(c0) <= value_tol:
        if c1 > slope_tol:
            return 0.0
        if abs(c1) <= slope_tol and c2 > 0.0:
            return 0.0
    for root in quadratic_roots(c0, c1, c2):
        if root <= 0.0 or root > length:
            continue
        if c1 + 2.0 * c2 * root > 0.0:
            return root
    return None


class PiecewiseSignal:
    """A right-continuous piecewise polynomial of degree <= 2.

    Segment ``i`` covers ``[starts[i], starts[i+1])`` (the last one ends at
    ``t_hi``) and holds coefficients in the local coordinate
    ``s = t - starts[i]``. Segments are appended left to right; zero-length
    segments are never stored, so a value set and immediately replaced at the
    same instant leaves no trace.
    """

    def __init__(self, t_lo: float, name: str = ""):
        self.name = name
        self.t_lo = float(t_lo)
        self.t_hi = float(t_lo)
        self._starts: List[float] = []
        self._coefs: List[Coefficients] = []

    # ------------------------------------------------------------------
    # Construction
    # ------------------------------------------------------------------

    @classmethod
    def constant(cls, value: float, t_lo: float, t_hi: float, name: str = "") -> "PiecewiseSignal":
        """Signal equal to ``value`` on ``[t_lo, t_hi]``."""
        sig = cls(t_lo, name)
        sig.append(t_hi, value)
        return sig

    @classmethod
    def from_steps(
        cls,
        times: Sequence[float],
        values: Sequence[float],
        t_lo: float,
        t_hi: float,
        name: str = "",
    ) -> "PiecewiseSignal":
        """Piecewise-constant signal with ``values[i]`` from ``times[i]``.

        Args:
            times: Increasing change times; ``times[0]`` must equal ``t_lo``.
            values: One value per change time.
            t_lo: Start of the domain.
            t_hi: End of the domain.
            name: Label used in error messages.

        Returns:
            The constructed signal.
        """
        if len(times) != len(values) or not times or times[0] != t_lo:
            raise ValueError("from_steps needs matching times/values starting at t_lo")
        sig = cls(t_lo, name)
        ends = list(times[1:]) + [t_hi]
        for end, value in zip(ends, values):
            sig.append(end, value)
        return sig

    def append(self, t_end: float, c0: float, c1: float = 0.0, c2: float = 0.0) -> None:
        """Extend the signal by one segment ``[t_hi, t_end]``.

        Raises:
            ValueError: If ``t_end`` lies before the current end of the domain.
        """
        if t_end < self.t_hi:
            raise ValueError(
                f"signal '{self.name}': segment end {t_end!r} precedes domain end {self.t_hi!r}"
            )
        if t_end == self.t_hi:
            return
        self._starts.append(self.t_hi)
        self._coefs.append((float(c0), float(c1), float(c2)))
        self.t_hi = float(t_end)

    # ------------------------------------------------------------------
    # Inspection
    # ------------------------------------------------------------------

    def __len__(self) -> int:
        return len(self._starts)

    def __repr__(self) -> str:
        return f"PiecewiseSignal({self.name!r}, [{self.t_lo}, {self.t_hi}], {len(self)} segments)"

    @property
    def domain(self) -> Tuple[float, float]:
        return (self.t_lo, self.t_hi)

    @property
    def breakpoints(self) -> List[float]:
        """Interior segment boundaries (candidate jump or kink times)."""
        return self._starts[1:]

    def segments(self, a: Optional[float] = None, b: Optional[float] = None) -> Iterator[Tuple[float, float, Coefficients]]:
        """Yield ``(lo, hi, coefs)`` pieces covering ``[a, b]``.

        Coefficients are re-expressed around each piece's own ``lo``.
        """
        a = self.t_lo if a is None else self._clamp(a)
        b = self.t_hi if b is None else self._clamp(b)
        if b <= a:
            return
        i = self._index(a, left=False)
        n = len(self._starts)
        while i < n:
            start = self._starts[i]
            if start >= b:
                break
            end = self._starts[i + 1] if i + 1 < n else self.t_hi
            lo = max(start, a)
            hi = min(end, b)
            if hi > lo:
                yield lo, hi, shift_polynomial(*self._coefs[i], lo - start)
            i += 1

    def snap(self, t: float, tol: float) -> float:
        """The segment start nearest to ``t`` if it lies within ``tol``, else ``t``.

        A lookup time computed as ``tau - theta`` lands on a stored jump
        only up to rounding; snapping puts it back on the jump so that
        ``eval`` and ``eval_left`` pick the intended sides.
        """
        if tol <= 0.0 or not self._starts:
            return t
        i = bisect.bisect_left(self._starts, t)
        best, best_d = t, tol
        for j in (i - 1, i):
            if 0 <= j < len(self._starts):
                d = abs(self._starts[j] - t)
                if d <= best_d:
                    best, best_d = self._starts[j], d
        return best

    # ------------------------------------------------------------------
    # Evaluation
    # ------------------------------------------------------------------

    def _clamp(self, t: float) -> float:
        slack = 16.0 * _EPS * max(1.0, abs(self.t_lo), abs(self.t_hi))
        if t < self.t_lo - slack or t > self.t_hi + slack or not self._starts:
            raise SignalDomainError(
                f"signal '{self.name}': t={t!r} outside domain [{self.t_lo!r}, {self.t_hi!r}]"
            )
        return min(max(t, self.t_lo), self.t_hi)

    def _index(self, t: float, left: bool) -> int:
        if left:
            i = bisect.bisect_left(self._starts, t) - 1
        else:
            i = bisect.bisect_right(self._starts, t) - 1
        return max(i, 0)

    def eval(self, t: float) -> float:
        """Exact right-continuous value at ``t``.

        Raises:
            SignalDomainError: If ``t`` lies outside the retained domain.
        """
        t = self._clamp(t)
        i = self._index(t, left=False)
        c0, c1, c2 = self._coefs[i]
        s = t - self._starts[i]
        return c0 + s * (c1 + s * c2)

    def eval_left(self, t: float) -> float:
        """Left limit at ``t`` (equals ``eval`` away from breakpoints)."""
        t = self._clamp(t)
        i = self._index(t, left=True)
        c0, c1, c2 = self._coefs[i]
        s = t - self._starts[i]
        return c0 + s * (c1 + s * c2)

    def slope(self, t: float, left: bool = False) -> float:
        """First derivative at ``t`` from the right (or from the left)."""
        t = self._clamp(t)
        i = self._index(t, left=left)
        _, c1, c2 = self._coefs[i]
        return c1 + 2.0 * c2 * (t - self._starts[i])

    def sample(self, times: Sequence[float]) -> np.ndarray:
        """Right-continuous values at every time in ``times``."""
        return np.array([self.eval(t) for t in times], dtype=float)

    # ------------------------------------------------------------------
    # Integration and inversion
    # ------------------------------------------------------------------

    def integrate(self, a: float, b: float) -> float:
        """Exact integral over ``[a, b]`` (negated when ``b < a``)."""
        if b < a:
            return -self.integrate(b, a)
        if b == a:
            self._clamp(a)
            return 0.0
        total = 0.0
        for lo, hi, (c0, c1, c2) in self.segments(a, b):
            s = hi - lo
            total += s * (c0 + s * (c1 / 2.0 + s * c2 / 3.0))
        return total

    def inverse(self, value: float) -> float:
        """Smallest ``t`` with ``self(t) = value`` for a continuous increasing signal.

        Raises:
            SignalDomainError: If ``value`` is outside the signal's range.
        """
        if not self._starts:
            raise SignalDomainError(f"signal '{self.name}' is empty")
        first = self._coefs[0][0]
        c0, c1, c2 = self._coefs[-1]
        s_end = self.t_hi - self._starts[-1]
        last = c0 + s_end * (c1 + s_end * c2)
        tol = 64.0 * _EPS * max(1.0, abs(first), abs(last))
        if value < first - tol or value > last + tol:
            raise SignalDomainError(
                f"signal '{self.name}': value {value!r} outside range [{first!r}, {last!r}]"
            )
        lo, hi = 0, len(self._starts) - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if self._coefs[mid][0] <= value:
                lo = mid
            else:
                hi = mid - 1
        i = lo
        c0, c1, c2 = self._coefs[i]
        end = self._starts[i + 1] if i + 1 < len(self._starts) else self.t_hi
        width = end - self._starts[i]
        v = value - c0
        if v <= 0.0:
            return self._starts[i]
        if c2 == 0.0:
            s = v / c1 if c1 > 0.0 else width
        else:
            disc = max(c1 * c1 + 4.0 * c2 * v, 0.0)
            s = 2.0 * v / (c1 + math.sqrt(disc))
        return self._starts[i] + min(max(s, 0.0), width)

    # ------------------------------------------------------------------
    # Retention
    # ------------------------------------------------------------------

    def prune(self, t_cut: float) -> None:
        """Forget segments lying entirely before ``t_cut``."""
        i = bisect.bisect_right(self._starts, t_cut) - 1
        if i < PRUNE_BATCH:
            return
        del self._starts[:i]
        del self._coefs[:i]
        self.t_lo = self._starts[0]

    def copy(self) -> "PiecewiseSignal":
        clone = PiecewiseSignal(self.t_lo, self.name)
        clone.t_hi = self.t_hi
        clone._starts = list(self._starts)
        clone._coefs = list(self._coefs)
        return clone


class HistoryWindow:
    """A signal together with the look-back it must keep available.

    Lookups at ``t - w(t)`` and ``t - theta_n`` must never fall outside the
    retained domain; ``retention`` grows with the running maximum of the
    waiting time and pruning only ever drops data older than that.
    """

    def __init__(self, signal: PiecewiseSignal, retention: float, margin: float = 0.1):
        self.signal = signal
        self.margin = margin
        self.retention = retention

    def observe_wait(self, w_max: float, theta_max: float) -> None:
        required = (1.0 + self.margin) * (w_max + theta_max)
        if required > self.retention:
            logger.debug("History '%s' retention grows to %.6g", self.signal.name, required)
            self.retention = required

    def prune(self, now: float) -> None:
        self.signal.prune(now - self.retention)


def first_root(
    g: Callable[[float], float],
    t0: float,
    t1: float,
    tol: float,
    scan_step: Optional[float] = None,
    breakpoints: Sequence[float] = (),
) -> Optional[float]:
    """Smallest sign change of ``g`` in ``(t0, t1]``.

    ``g`` is sampled on a grid no coarser than ``scan_step`` (plus any known
    breakpoints); the first bracketing pair is refined with Brent's method.

    Args:
        g: Guard function.
        t0: Start of the search window (excluded).
        t1: End of the search window (included).
        tol: Absolute time tolerance of the returned root.
        scan_step: Sampling step; defaults to ``(t1 - t0) / 1e4``.
        breakpoints: Extra sample times where ``g`` may kink.

    Returns:
        The root, or ``None`` when no sign change exists.
    """
    if t1 <= t0:
        return None
    if scan_step is None or scan_step <= 0.0:
        scan_step = (t1 - t0) / 1e4
    count = max(1, int(math.ceil((t1 - t0) / scan_step)))
    grid = np.linspace(t0, t1, count + 1)
    extra = [b for b in breakpoints if t0 < b < t1]
    if extra:
        grid = np.unique(np.concatenate([grid, extra]))

    t_prev = float(grid[0])
    g_prev = g(t_prev)
    for t_next in grid[1:]:
        t_next = float(t_next)
        g_next = g(t_next)
        if g_next == 0.0:
            return t_next
        if g_prev != 0.0 and (g_prev < 0.0) != (g_next < 0.0):
            return float(brentq(g, t_prev, t_next, xtol=tol))
        t_prev, g_prev = t_next, g_next
    return None
