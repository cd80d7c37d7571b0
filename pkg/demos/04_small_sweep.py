"""
A coarse sweep over receiver positions, averaged along rings around the transmitter.

The full desk-scale sweep is the default SweepConfig (or ``beamaid`` on the
command line); this one uses a coarser grid so it finishes in seconds.
"""
import sys
import tempfile
from pathlib import Path

from beamaid import SweepConfig, read_results, run_sweep, write_results
from beamaid.protocols import PROTOCOL_KINDS

cfg = SweepConfig(grid_step=5.0, realizations=2, x_max=30.0, y_min=-15.0, y_max=15.0)
res = run_sweep(cfg)

print("dist_m  " + "  ".join(f"{p:>22s}" for p in PROTOCOL_KINDS))
print("        " + "  ".join(f"{'snr  ntrans  peb_db':>22s}" for _ in PROTOCOL_KINDS))
dists = sorted({r.dist_m for r in res.radial})
for d in dists:
    cells = []
    for p in PROTOCOL_KINDS:
        r = next((x for x in res.radial_for(p) if x.dist_m == d), None)
        peb_txt = "-" if r is None or r.peb_db != r.peb_db else f"{r.peb_db:.1f}"
        cells.append(f"{r.snr_db:6.1f} {r.n_trans_norm:6.2f} {peb_txt:>7s}" if r else " " * 22)
    print(f"{d:6.1f}  " + "  ".join(f"{c:>22s}" for c in cells))

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp()) / "sweep.csv"
write_results(res, out)
print("\nwrote", out, "and", out.with_name("radial_" + out.name))
print(len(read_results(out).rows), "rows read back")
