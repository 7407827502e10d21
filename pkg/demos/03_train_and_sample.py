# %% [markdown]
# # Consistency training and one-step restoration
#
# A short v3 run: indices are drawn from {2,...,k} by the loss-aware
# sampler, and the scorer periodically picks the restore point op. At
# inference the prior output is noised to t_op and restored in one step.

# %%
import numpy as np

from cmrestore import DatasetSpec, ScheduleConfig, build_schedule
from cmrestore.data import generate, train_test_split

from cmrestore.prior import compute_k, train_prior
from cmrestore.sampler import generate_prior_only, generate_v3
from cmrestore.scorer import FeatureProjector, score_samples
from cmrestore.trainer import TrainerConfig, train_loop

data = generate(DatasetSpec(count=1500))
train, test = train_test_split(data, seed=0)
schedule = build_schedule(ScheduleConfig())
prior = train_prior(train, epochs=40, seed=1)
bridge = compute_k(train, prior, schedule)
projector = FeatureProjector.create(train.x[0].size, seed=3)

# %%
config = TrainerConfig(steps=2000, scorer_cadence=500, eval_batch=128, candidate_stride=2)
state, rows = train_loop(config, train, schedule, prior, bridge, projector)
for row in rows[::5]:
    print(row)
print("restore point op =", state.scorer.op, " k =", bridge.k)

# %%
batch = test[:128]
prior_out, _ = generate_prior_only(prior, batch.cond)
restored, report = generate_v3(state.denoiser, prior, state.scorer, batch.cond, schedule,
                               np.random.default_rng(0))
print("NFE:", report.nfe)
print("Frechet, prior only:", score_samples(projector, prior_out, batch.x))
print("Frechet, v3:        ", score_samples(projector, restored, batch.x))
