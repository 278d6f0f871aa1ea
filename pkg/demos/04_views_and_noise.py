"""How the error depends on the viewing angle and on pixel noise."""

import numpy as np

from stentshape.config import ExperimentConfig
from stentshape.simulation import MC_COLUMNS, monte_carlo, reports_to_csv, view_sweep

cfg = ExperimentConfig.load()
spec, markers = cfg.graft, cfg.markers()

# Every one of the 13 views, with 0.5 px of noise on the marker centroids.
reports = view_sweep(spec, cfg.deformation, noise_sigma=0.5, seed=1, n_trials=10, markers=markers,
                     with_shape=False)
by_view = {}
for r in reports:
    by_view.setdefault(r.view_angle, []).append(r.marker_mean)
for angle, errs in by_view.items():
    print(f"view {angle:+5.0f} deg: mean marker error {np.mean(errs):.3f} mm")
means = np.array([np.mean(v) for v in by_view.values()])
print(f"spread across views: {means.max() / means.min():.2f}x")

# Random deformations and views at increasing noise.
for sigma in (0.0, 0.5, 1.0, 2.0):
    rows = monte_carlo(spec, 100, seed=2, noise_sigma=sigma, markers=markers)
    print(f"sigma {sigma:3.1f} px: median marker error {np.median([r['marker_mean_mm'] for r in rows]):.3g} mm, "
          f"median angular error {np.median([r['angular_mean_deg'] for r in rows]):.3g} deg")

# The same rows as CSV, ready for a plotting tool.
print(reports_to_csv(rows[:3], MC_COLUMNS))
