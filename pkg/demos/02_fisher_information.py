"""
Fisher information of a few training beams and the resulting position bound.

The information of every beam adds up; the bound on position error (PEB)
comes from inverting the information about the location parameters after
mapping channel parameters to position, orientation, scatterer and gains.
"""
import numpy as np

from beamaid import Scenario, accumulate, calibrated, fim_beam, jacobian_T, make_beam, peb, reb, scene_paths, to_eta_prime
from beamaid.array import DISCRETE

scene = calibrated(Scenario(rx_pos=(12.0, 4.0)))
paths = scene_paths(scene)
T = jacobian_T(paths, scene)

for pa in paths:
    kind = "LOS" if pa.is_los else f"via scatterer {pa.scatterer}"
    print(f"{kind:16s} delay {pa.delay * 1e9:7.3f} ns  aod {pa.aod:+.3f}  aoa {pa.aoa:+.3f}  |h| {abs(pa.gain):.2e}")

# beams pointed at the receiver with growing apertures
aod = paths[0].aod
fims = []
for n in (4, 8, 16, 32, 64):
    fims += [fim_beam(make_beam(aod + e, n, scene, DISCRETE), paths, scene) for e in (-0.5 / n, 0.0, 0.5 / n)]
    Jp = to_eta_prime(accumulate(fims), T)
    print(f"after {len(fims):2d} beams up to {n:2d} antennas: PEB {peb(Jp) * 100:7.3f} cm  REB {np.degrees(reb(Jp)):.4f} deg")

# Without the scatterer, beams that all point exactly at the receiver say nothing
# about the departure angle beyond what the unknown gain phase can absorb.
# Offsetting two of them restores observability.
los_scene = calibrated(Scenario(rx_pos=(12.0, 4.0), scatterers=()))
los_paths = scene_paths(los_scene)
T0 = jacobian_T(los_paths, los_scene)
for offsets in ((0.0, 0.0, 0.0), (0.0, -0.01, 0.01)):
    J = accumulate([fim_beam(make_beam(aod + e, 64, los_scene), los_paths, los_scene) for e in offsets])
    print(f"LOS only, 64-antenna beams offset by {offsets}: PEB {peb(to_eta_prime(J, T0)):.4f} m")
