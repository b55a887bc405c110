"""Finite-temperature preparation, its Wigner function and the cavity sideband readout.

Run: python demos/03_thermal_readout.py   (about 1 min)
Writes demo_outputs/ next to the working directory.
"""

from pathlib import Path

import numpy as np

from dwcat.analysis import populations, wigner
from dwcat.dynamics import ProtocolConfig, run_protocol, target_state
from dwcat.readout import CavityParams, find_sidebands, output_spectrum
from dwcat.spectral import gap

out = Path("demo_outputs")
out.mkdir(exist_ok=True)

cfg = ProtocolConfig(dt2=1.2566)  # 0.1 us at 15 mK, Q = 1e6
tr = run_protocol(cfg)
print(f"F(t_c) = {tr.meta['fidelity_at_tc']:.4f}, final F = {tr.final_fidelity:.4f}")
tr.to_csv(out / "trajectory.csv")

_, eig_f = target_state(cfg)
p = populations(tr.final_state, eig_f)
print("final populations p0..p5:", np.array2string(p[:6], precision=4))

grid = wigner(tr.final_state, resolution=(241, 121))
print(f"Wigner integral {grid.integral():.4f}, W(0,0) = {grid.value_at(0, 0):+.4f}, min {grid.values.min():+.4f}")
grid.to_csv(out / "wigner.csv")

res = output_spectrum(p[:26], eig_f, CavityParams(), cfg.bath)
print("three strongest red peaks:", np.array2string(np.sort(find_sidebands(res, 3)), precision=5))
# ground-state lines; thermal population of level 1 adds lines of its own
print("ground-state lines -d30, -d50, -d70:", np.array2string(np.array([-gap(eig_f, m, 0) for m in (3, 5, 7)]), precision=5))
