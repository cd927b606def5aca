"""Table of validation error against systematic-noise level 0 to 7.

A nearly calibrated sensor gets an extra per-ring offset that grows with the
level. The similarity model absorbs it at every level; the two spherical
baseline models do not.

Run: python3 demos/03_systematic_noise.py   (about a minute)
"""

from sim3cal.cli import format_noise_table
from sim3cal.experiments import noise_table, sweep_noise

rows = sweep_noise(seed=1)
print(format_noise_table(noise_table(rows)))
