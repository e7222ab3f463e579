"""KMeans, bisecting KMeans and mean shift on three Gaussian blobs."""
import numpy as np

from crstc import clustering

rng = np.random.default_rng(7)
centers = np.array([[0, 0], [4, 0], [2, 3.5]])
pts = np.concatenate([c + 0.6 * rng.standard_normal((60, 2)) for c in centers])

km = clustering.kmeans(pts, 3, seed=0)
print("kmeans     inertia", round(km.inertia, 2), "sizes", np.bincount(km.labels))

bk = clustering.bisecting_kmeans(pts, 3, seed=0)
print("bisecting  inertia", round(bk.inertia, 2), "sizes", np.bincount(bk.labels))

# no k needed; the bandwidth defaults to half the median pairwise distance
ms = clustering.mean_shift(pts)
print("meanshift  found", ms.k, "modes at", np.round(ms.centers, 2).tolist())

# silhouette picks k when it is unknown
print("select_k  ->", clustering.select_k(pts, range(2, 7)))
