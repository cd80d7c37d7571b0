"""
One run of each beam training protocol at a single receiver position.

The conventional search doubles the antennas every iteration. The
position-aided searches use the fed-back position estimate to skip rungs of
the ladder when the angle of departure is already known well enough.
"""
import math

from beamaid import CBS, C_JPBS, D_JPBS, ProtocolConfig, Scenario, calibrated, run_protocol

scene = calibrated(Scenario()).with_rx((6.0, -3.0))

for kind in (CBS, D_JPBS, C_JPBS):
    t = run_protocol(scene, ProtocolConfig(kind=kind, rng_seed=1))
    print(f"\n{kind}: {t.transactions_approx} beams ({t.transactions_exact} messages), final SNR {t.snr_db:.2f} dB")
    for r in t.iterations:
        pts = ", ".join(f"{b.pointing:+.3f}" for b in r.beams)
        bound = "" if not math.isfinite(r.peb) else f"  PEB {r.peb * 100:.2f} cm"
        tag = "tree" if r.hierarchical else "aided"
        print(f"  it {r.index}: {r.n_active:2d} antennas [{tag}] -> {pts}{bound}")

# feeding back the mean of the estimate instead of a random draw
t = run_protocol(scene, ProtocolConfig(kind=D_JPBS, feedback="mean"))
print(f"\nD_JPBS with mean feedback: {t.transactions_approx} beams, SNR {t.snr_db:.2f} dB")
