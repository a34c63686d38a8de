"""Dispersive decay of the linear lattice flow at rate t^(-1/3).

The free kernel is a Bessel function whose sup-norm decays like t^(-1/3),
slower than the continuum t^(-1/2) because of the inflection points of the
lattice dispersion relation.  The projected flow of H = -Delta + 0.3 q* decays
at the same rate.
"""

import numpy as np

from dnls_lab.evolution import decay_exponent, free_propagator_kernel
from dnls_lab.lattice import Lattice, LatticeField
from dnls_lab.potentials import Potential, q_star

times = np.geomspace(10, 500, 20)
sites = np.arange(-1500, 1501)
sups = [np.max(np.abs(free_propagator_kernel(t, sites))) for t in times]
print(f"Bessel kernel: fitted exponent {np.polyfit(np.log(times), np.log(sups), 1)[0]:+.4f}")

lattice = Lattice.symmetric(1280)
free = Potential(LatticeField(lattice, np.zeros(lattice.size)))
for name, q in (("free lattice", free), ("0.3 q*, bound states removed", q_star(lattice, 0.3))):
    res = decay_exponent(q, times)
    print(f"{name:30s} exponent {res.exponent:+.4f}, prefactor {res.prefactor:.3f}")
