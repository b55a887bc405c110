"""Mechanical and electrostatic numbers behind the dimensionless model.

Run: python demos/04_device_design.py
"""

import math

from dwcat.device import (
    GRAPHENE_MEMBRANE,
    REFERENCE_OMEGA,
    ElectrodeGeometry,
    alpha2_for_zeta,
    alpha3_root,
    elastic_params,
    electrostatic_coeffs,
)

el = elastic_params(GRAPHENE_MEMBRANE, omega=REFERENCE_OMEGA)
unit = el.units()
print(f"effective mass {el.mass:.4e} kg, beta {el.beta:.4e} J/m^4")
print(f"z_zpm {unit.z_zpm:.4e} m, gamma {unit.gamma:.6e}")
for zeta in (-1.0, -2.5e-4, 3e-4):
    print(f"  zeta = {zeta:+.1e} needs alpha2 = {alpha2_for_zeta(zeta, unit) + 0.0:+.4e} N/m")

print("\ncubic-free standoff b/z0 versus electrode half-length a/z0:")
for a in (2.0, 5.0, 10.0, 50.0, math.inf):
    print(f"  a = {a:>5}: b = {alpha3_root(a, 1.0):.6f}  (1/sqrt3 = {1 / math.sqrt(3):.6f})")

c = electrostatic_coeffs(ElectrodeGeometry(math.inf, 1 / math.sqrt(3), 1.0), 4)
print("normalized alpha_1..alpha_4 at the long-rod root:", [f"{v:+.3e}" for v in c.normalized])
