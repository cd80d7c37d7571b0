"""
Beams from the two codebooks and how wide they are.

The discrete codebook quantizes each steering phase to one of four values,
the continuous one applies the exact phase. Beams get narrower as more
antennas are switched on and wider as they are steered toward endfire.
"""
import numpy as np

from beamaid import CONTINUOUS, DISCRETE, Scenario, beam_gain, codebook_directions, hpbw, make_beam

scene = Scenario()

# Half-power beamwidth (rad) for the antenna ladder, broadside and steered
print("n_active  hpbw(0)   hpbw(0.8)  hpbw(1.3)")
for n in (2, 4, 8, 16, 32, 64):
    print(f"{n:8d}  {hpbw(n, 0.0, scene):.4f}    {hpbw(n, 0.8, scene):.4f}     {hpbw(n, 1.3, scene):.4f}")

# 0.886 * lambda / (N d) is the textbook broadside approximation
print("\napprox for 64 antennas:", 0.886 * 2 / 64)

# Quantization loss of the 4-phase codebook at its own pointing directions
for n in (4, 16, 64):
    dirs = codebook_directions(n)
    loss = [
        20 * np.log10(beam_gain(make_beam(t, n, scene, DISCRETE), t, scene) / beam_gain(make_beam(t, n, scene, CONTINUOUS), t, scene))
        for t in dirs
    ]
    print(f"n={n:2d}: worst quantization loss {min(loss):.2f} dB over {len(dirs)} beams")

# A beam pattern, coarsely
f = make_beam(0.3, 16, scene, DISCRETE)
for th in np.linspace(-0.2, 0.8, 11):
    g = beam_gain(f, th, scene) ** 2
    print(f"{th:+.2f} rad  {'#' * int(60 * g / 0.25)}")
