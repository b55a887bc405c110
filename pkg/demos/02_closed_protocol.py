"""Closed-system preparation: plain sine ramp versus the even-level counterdiabatic drive.

Run: python demos/02_closed_protocol.py   (about 30 s)
"""

import math

from dwcat.control import TransitionSet
from dwcat.dynamics import ProtocolConfig, run_protocol

closed = ProtocolConfig(temperature=0.0, quality_factor=math.inf)

print("no drive, sine ramp:")
for dt2 in (110.0, 500.0, 1000.0):
    F = run_protocol(closed.replace(transitions=TransitionSet(), dt2=dt2)).final_fidelity
    print(f"  dt2 = {dt2:7.1f}/omega   F = {F:.4f}")

print("\ncounterdiabatic drive on even transitions, dt2 = 110/omega:")
for level in (2, 4, 6):
    tr = run_protocol(closed.replace(transitions=TransitionSet.up_to(level)))
    print(f"  up to level {level}: F = {tr.final_fidelity:.6f}, final purity {tr.purities[-1]:.6f}")
