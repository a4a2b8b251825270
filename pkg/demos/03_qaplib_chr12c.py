"""Solve the bundled chr12c QAPLIB instance and compare with its known optimum."""
import numpy as np

from qucoop import engine, perm, qap

inst = qap.bundled_instance("chr12c")
print(inst.name, "n =", inst.n, "known optimum =", inst.known_optimal)

best_known = perm.from_image(qap.known_solution("chr12c"))
print("objective at the published assignment:", qap.kb_objective(inst, best_known))

obj, param = qap.build_composite(inst, sense="min")  # QAPLIB values are minima of trace(A P B P^T)
x0 = np.zeros(param.dim_params, dtype=np.int8)

# noisy iterates: one random bit flipped before each linearization
cfg = engine.IterationConfig(max_iters=30, noise_flips=1, stop_on_fixed_point=False, seed=1)
rec = engine.run(obj, param, x0, config=cfg)
P = qap.perm_matrix(rec.best_bits, inst.n)
achieved = qap.kb_objective(inst, P)
print(f"achieved {achieved:g}, gap {qap.gap_percent(achieved, inst.known_optimal):.2f}%")
print("assignment:", perm.to_image(P))
