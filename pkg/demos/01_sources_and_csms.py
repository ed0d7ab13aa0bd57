"""
Simulating sources and building cross-spectral matrices
=======================================================

Sample a random acoustic scene, simulate it at the desk-scale microphone
array under each effect (ambient noise, reflections, directivity) and see
how far each variant's CSM drifts from the dry monopole baseline.

Run with ``python demos/01_sources_and_csms.py``.
"""

# %%
# A scene is drawn from (seed, index), so the same pair always gives the same model.
import numpy as np

from csmgan import acoustics as ac
from csmgan import tasks
from csmgan.csm import build_csm, csm_distance, normalize_slices

model = ac.sample_model(seed=0, index=7)
print(f"{len(model.sources)} sources, T = {model.temperature:.1f} C, level = {model.level:.1f} dB")
for s in model.sources:
    print("  position", np.round(s.position, 2), " aperture/pi", round(s.aperture / np.pi, 3))

# %%
# The desk profile uses 12 microphones on the full-scale array geometry and 4 bins.
profile = tasks.DESK
array, grid = profile.array(), profile.grid()
print("bins [Hz]:", grid.bins)

# %%
# Pressures are (n_mics, n_bins); one snapshot gives a rank-1 CSM per bin.
p = ac.simulate_pressures(model, array, grid, ac.BASELINE)
C = normalize_slices(build_csm(p))
print("CSM shape", C.shape, " slice ranks", [int(np.linalg.matrix_rank(C[..., k])) for k in range(C.shape[-1])])

# %%
# Each task corrupts the input differently. The identity accuracy 1 - eps is the
# score a do-nothing filter would get on this scene.
for task in tasks.TASK_IDS:
    vx, vy = tasks.task_variants(task)
    x = tasks.simulate_csm(model, profile, vx)
    y = tasks.simulate_csm(model, profile, vy)
    print(f"task {task} ({tasks.TASK_NAMES[task]:>22}): g_acc(Id) = {1 - csm_distance(y, x):.4f}")
