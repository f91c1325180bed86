"""Finite-difference check of every parameter in the model, and what a broken backward looks like."""

from link_avvp import numerics
from link_avvp.gradcheck import full_model_gradcheck

report, params = full_model_gradcheck({"T": 4, "d": 8, "C": 3, "d_text": 8}, seed=0)
print(f"{params.count()} parameters, {report.n_coords} coordinates checked")
print(f"max relative error {report.max_rel_error:.2e} (worst: {report.worst_param})")
for name, err in sorted(report.per_param.items(), key=lambda kv: -kv[1])[:5]:
    print(f"  {name:28s} {err:.2e}")

# Scale the matmul backward by 1.5 and the check catches it immediately.
with numerics.corrupt_backward("matmul", 1.5):
    broken, _ = full_model_gradcheck(seed=0)
print(f"with a corrupted matmul backward: {broken.max_rel_error:.2e} in {broken.worst_param}")
