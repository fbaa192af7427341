"""Big-piece pipeline on the two-graph example at (1, 0), R = 1."""
import json

import numpy as np

from pgmt.bigpieces import run_big_pieces
from pgmt.surfaces import build_two_graph_example, two_graph_psi

surface = build_two_graph_example(half_time=16.0, pitch=2.0 ** -6)
bases = [(np.array([two_graph_psi(t, 1), t]), 0.25) for t in (-0.5, 0.0, 0.5)]
run = run_big_pieces(surface, np.array([1.0, 0.0]), 1.0, bases, M_adr=2.0,
                     transfer_bases=[(np.array([q]), 0.25) for q in (-0.25, 0.0, 0.25)])
summary = run.summary()
print(json.dumps({k: summary[k] for k in ("nu", "contact_shadow_original", "good_set", "transfer")},
                 indent=2))
print("contact shadow (normalised frame):", run.envelope.shadow_measure, ">= 1/8")
