"""Regularity profile of psi(t) = 1 + |t|^(1/2) under grid refinement."""
import numpy as np

from pgmt.regularity import regularity_profile
from pgmt.surfaces import GraphFunction

for k in (6, 7, 8):
    g = GraphFunction.from_function(lambda P: 1 + np.sqrt(np.abs(P[:, 0])), [-4.0], [4.0],
                                    2.0 ** (-k / 2), lip_constant=1.0)
    prof = regularity_profile(g)
    d = prof.to_dict()
    print(f"dt=2^-{k}: lip {d['lip']:.4f}  bmo {d['bmo']:.4f}  strichartz {d['strichartz']:.4f}  "
          f"truncation {d['truncation']}")
