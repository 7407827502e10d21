# %% [markdown]
# # Prior regression and the restore level k
#
# The prior sees only the condition, so it recovers the smooth part of each
# patch and misses the phase-randomized texture. The residual energy fixes
# the shallowest level k whose noised prior output is as close (in KL) to
# the noised data as pure noise at T is.

# %%
import numpy as np

from cmrestore import DatasetSpec, ScheduleConfig, build_schedule
from cmrestore.data import generate, texture_variance, train_test_split

from cmrestore.prior import compute_k, prior_predict, train_prior

spec = DatasetSpec(count=1500)
data = generate(spec)
train, test = train_test_split(data, seed=0)
print("patch shape:", train.x.shape[1:], " texture variance per pixel:", texture_variance(spec))

# %%
prior = train_prior(train, epochs=40, seed=1)
print("per-pixel MSE, first/last epoch:", prior.history[0], prior.history[-1])
held_out = np.mean((prior_predict(prior, test.cond) - test.x) ** 2)
print("held-out per-pixel MSE:", held_out)

# %%
schedule = build_schedule(ScheduleConfig())
bridge = compute_k(train, prior, schedule)
print(f"energy ratio {bridge.ratio:.4f}  ->  k = {bridge.k}, t_k = {schedule.level(bridge.k):.3f}")
