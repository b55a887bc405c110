"""Watch the lowest levels pair up into parity doublets as the trap turns into a double well.

Run: python demos/01_doublet_formation.py
"""

import numpy as np

from dwcat.analysis import position_density
from dwcat.device import reference_units
from dwcat.spectral import BasisPolicy, PotentialParams, diagonalize, gap
from dwcat.states import DensityMatrix

unit = reference_units()
policy = BasisPolicy()
print(f"Duffing ratio gamma = {unit.gamma:.6e}")
print(f"{'zeta':>11} {'E1-E0':>12} {'E2-E0':>12} {'E3-E2':>12}  basis omega0")
for zeta in (-1.0, -1e-2, -1e-3, -2.5e-4, 0.0, 1e-4, 3e-4):
    eig = diagonalize(PotentialParams(zeta, unit.gamma), policy)
    print(f"{zeta:11.2e} {gap(eig, 1, 0):12.5e} {gap(eig, 2, 0):12.5e} {gap(eig, 3, 2):12.5e}  {eig.basis.omega0:.4f}")

# at zeta_f the ground state is the even (cat) combination of the two wells
eig = diagonalize(PotentialParams(3e-4, unit.gamma), policy)
x = np.linspace(-150, 150, 7)
ground = DensityMatrix.from_pure(eig.states[:, 0], eig.basis)
print("\nground-state position density at zeta_f (x in z_zpm):")
for xi, d in zip(x, position_density(ground.matrix, eig.basis, x)):
    print(f"  x = {xi:7.1f}   |psi|^2 = {d:.3e}")
