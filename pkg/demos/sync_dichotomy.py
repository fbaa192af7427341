"""Strong versus weak synchronisation on the two-graph example at p = (1, 0)."""
import numpy as np

from pgmt.pargeo import ParCube, PointST
from pgmt.surfaces import build_two_graph_example
from pgmt.topology import find_corkscrews, label_components

surface = build_two_graph_example(half_time=4096.0, pitch=2.0 ** -2)
p = np.array([1.0, 0.0])
print("   r   strong   weak")
for k in range(2, 7):
    r = 2.0 ** k
    lab = label_components(surface, ParCube(PointST.from_array(p), r), r / 64)
    gam = []
    for mode in ("strong", "weak"):
        pair = find_corkscrews(surface, lab, p, r, mode=mode, region=1)
        gam.append(0.0 if pair is None else pair.gamma_achieved)
    print(f"{r:5.0f}  {gam[0]:.4f}  {gam[1]:.4f}")
