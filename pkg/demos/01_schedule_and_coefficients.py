# %% [markdown]
# # Noise levels and skip coefficients
#
# The trajectory is discretized on a power-law grid between epsilon and T.
# At epsilon the skip coefficient is exactly one and the output weight is
# exactly zero, so the consistency function is the identity there.

# %%
import numpy as np

from cmrestore import ScheduleConfig, build_schedule
from cmrestore.schedule import skip_coefficients

cfg = ScheduleConfig()
schedule = build_schedule(cfg)
print("N =", schedule.N)
print("first levels:", np.round(schedule.levels[:4], 5))
print("last levels: ", np.round(schedule.levels[-3:], 3))

# %% [markdown]
# Boundary behaviour, and the two coefficients along the grid.

# %%
print(skip_coefficients(cfg.epsilon, cfg))
c_skip, c_out = schedule.coefficients
for n in (1, 2, 10, 25, 40, 50):
    print(f"n={n:2d}  t={schedule.level(n):9.4f}  c_skip={c_skip[n - 1]:.5f}  c_out={c_out[n - 1]:.5f}")

# %% [markdown]
# A smaller rho spreads the levels more evenly (the rho=4 ablation row).

# %%
flat = build_schedule(ScheduleConfig(rho=4.0))
print("median level, rho=7:", np.median(schedule.levels), " rho=4:", np.median(flat.levels))
