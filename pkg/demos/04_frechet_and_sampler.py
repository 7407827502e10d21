# %% [markdown]
# # Frechet distance and the importance sampler
#
# Two small building blocks, checked against closed forms.

# %%
import numpy as np

from cmrestore.scorer import GaussianSummary, fit_gaussian, frechet_distance
from cmrestore.trainer import LossTable, index_probabilities, sample_indices, sampler_entropy

rng = np.random.default_rng(0)
a = GaussianSummary(np.zeros(2), np.eye(2))
b = GaussianSummary(np.array([3.0, 4.0]), np.eye(2))
print("pure mean shift (expect 25):", frechet_distance(a, b))
print("variance 1 vs 4 (expect 1): ",
      frechet_distance(GaussianSummary(np.zeros(1), np.eye(1)), GaussianSummary(np.zeros(1), 4 * np.eye(1))))

# %% [markdown]
# Sample estimates converge on the population distance as the set grows.

# %%
for size in (100, 1000, 10000):
    fa = fit_gaussian(rng.normal(size=(size, 4)))
    fb = fit_gaussian(rng.normal(loc=0.5, size=(size, 4)))
    print(size, round(frechet_distance(fa, fb), 4), "(population value 1.0)")

# %% [markdown]
# The sampler stays uniform until every index has ten visits, then leans
# toward high-loss indices while keeping a floor of lam/(k-1).

# %%
k = 20
table = LossTable(50)
print("warm-up entropy:", sampler_entropy(index_probabilities(table, k)), "max:", np.log(k - 1))
table.counts[2:] = 10
table.means[2:] = np.linspace(2.0, 0.1, 49)
p = index_probabilities(table, k)
draws = sample_indices(table, k, rng, 200_000)
freq = np.bincount(draws, minlength=k + 1)[2:] / len(draws)
print("p_2, p_k:", p[0], p[-1], " floor:", table.lam / (k - 1))
print("max |freq - p|:", np.max(np.abs(freq - p)))
