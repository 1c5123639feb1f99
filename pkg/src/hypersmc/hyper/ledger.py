"""Evidence ledger: the (theta, log-evidence) pairs produced by one run."""

from dataclasses import dataclass

import numpy as np

from ..smc.sampler import RunTrace


@dataclass(frozen=True)
class EvidenceLedger:
    """Knots ``theta(t)`` (strictly decreasing in ``t``) with their log-evidences."""

    t: np.ndarray
    thetas: np.ndarray
    log_evidence: np.ndarray

    def __post_init__(self):
        if len(self.thetas) == 0:
            raise ValueError("empty ledger")
        if np.any(np.diff(self.thetas) >= 0):
            raise ValueError("ledger thetas must be strictly decreasing")
        if not np.all(np.isfinite(self.log_evidence)):
            raise ValueError("ledger log-evidences must be finite")

    def __len__(self):
        return len(self.thetas)

    @property
    def theta_range(self):
        return float(self.thetas[-1]), float(self.thetas[0])

    def shifted(self, constant):
        return EvidenceLedger(self.t, self.thetas, self.log_evidence + constant)

    def rows(self):
        return list(zip(self.thetas.tolist(), self.log_evidence.tolist()))


def build_ledger(trace: RunTrace):
    """One entry per iteration with positive exponent.

    The stored per-iteration evidences are the epoch-product estimates, so
    the ledger needs no recomputation.
    """
    recs = [r for r in trace.records if r.alpha > 0]
    if not recs:
        raise ValueError("trace has no iteration with positive exponent")
    return EvidenceLedger(t=np.array([r.t for r in recs]),
                          thetas=np.array([r.theta for r in recs], dtype=float),
                          log_evidence=np.array([r.log_evidence for r in recs], dtype=float))


def trapezoid_weights(thetas):
    """Trapezoid-rule weights on the (possibly unevenly spaced) knots ``thetas``.

    End weights are half the adjacent gap and interior weights half the gap
    between the two neighbours, so they sum to ``|thetas[-1] - thetas[0]|``
    for monotone knots.
    """
    th = np.asarray(thetas, dtype=float)
    if th.size < 2:
        raise ValueError("need at least two knots")
    g = np.empty_like(th)
    g[0] = abs(th[1] - th[0]) / 2
    g[-1] = abs(th[-1] - th[-2]) / 2
    g[1:-1] = np.abs(th[2:] - th[:-2]) / 2
    return g
