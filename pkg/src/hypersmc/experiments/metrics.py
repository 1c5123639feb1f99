"""Localization metrics and point estimators for multi-dipole posteriors."""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment


def ospa(est, truth):
    """Sum of matched distances under the best assignment.

    ``min over label permutations of sum_{i <= min(|est|, |truth|)} |est_i - truth_phi(i)|``,
    with no cardinality penalty and no cutoff; 0 when either set is empty.
    """
    est = np.asarray(est, dtype=float).reshape(-1, 3) if len(est) else np.zeros((0, 3))
    truth = np.asarray(truth, dtype=float).reshape(-1, 3) if len(truth) else np.zeros((0, 3))
    if len(est) == 0 or len(truth) == 0:
        return 0.0
    cost = np.linalg.norm(est[:, None, :] - truth[None, :, :], axis=2)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum())


@dataclass
class DipoleEstimate:
    d_hat: int
    voxels: list
    locations: np.ndarray

    def __post_init__(self):
        if self.d_hat != len(self.voxels):
            raise ValueError("d_hat must equal the number of locations")


def weighted_kmeans(points, weights, k, max_iter=100):
    """Weighted k-means with deterministic farthest-point seeding.

    The first centre is the heaviest point; each further centre is the point
    farthest from the centres chosen so far (lowest index on ties).

    Returns
    -------
    labels : ndarray of int
    centres : ndarray, shape (k, dim)
    """
    points = np.asarray(points, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if k < 1 or k > len(points):
        raise ValueError(f"cannot form {k} clusters from {len(points)} points")
    centres = [points[int(np.argmax(weights))]]
    for _ in range(1, k):
        dist = np.min(np.linalg.norm(points[:, None] - np.array(centres)[None], axis=2), axis=1)
        centres.append(points[int(np.argmax(dist))])
    centres = np.array(centres)
    labels = None
    for _ in range(max_iter):
        dist = np.linalg.norm(points[:, None] - centres[None], axis=2)
        new = np.argmin(dist, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            sel = labels == j
            if weights[sel].sum() > 0:
                centres[j] = np.average(points[sel], axis=0, weights=weights[sel])
    return labels, centres


def dipole_estimators(d, locs, weights, grid_positions):
    """Number and locations of dipoles from weighted samples of source configurations.

    Parameters
    ----------
    d : ndarray of int, shape (n,)
    locs : ndarray of int, shape (n, max_dipoles)
        Voxel indices, padded with -1.
    weights : ndarray, shape (n,)
    grid_positions : ndarray, shape (V, 3)

    Notes
    -----
    ``d_hat`` maximizes the weighted pmf of ``d`` (smaller value on ties).
    The voxels of all samples with ``d == d_hat`` are clustered into
    ``d_hat`` groups; each estimate is the voxel with the largest posterior
    mass within its group.
    """
    d = np.asarray(d)
    weights = np.asarray(weights, dtype=float)
    pmf = np.bincount(d, weights=weights)
    d_hat = int(np.argmax(pmf))
    if d_hat == 0:
        return DipoleEstimate(0, [], np.zeros((0, 3)))
    sel = d == d_hat
    if not np.any(weights[sel] > 0):
        raise ValueError("no weighted sample has the estimated number of dipoles")
    vox = np.asarray(locs)[sel][:, :d_hat].ravel()
    w = np.repeat(weights[sel], d_hat)
    mass = np.bincount(vox, weights=w, minlength=len(grid_positions))
    support = np.flatnonzero(mass > 0)
    k = min(d_hat, support.size)
    labels, _ = weighted_kmeans(grid_positions[support], mass[support], k)
    voxels = []
    for j in range(k):
        members = support[labels == j]
        voxels.append(int(members[np.argmax(mass[members])]))
    # a cluster can only be lost when fewer distinct voxels than dipoles exist
    while len(voxels) < d_hat:
        voxels.append(voxels[-1])
    return DipoleEstimate(d_hat, voxels, grid_positions[voxels])
