"""
Pair-copulas
------------
The building blocks of a D-vine are one-parameter bivariate copulas. Each
family is indexed here by Kendall's tau, which makes families comparable.
"""
import numpy as np

from repvine import bicop
from repvine.bicop import Family

#%%
# A Clayton copula with tau = 0.5 has lower but no upper tail dependence.
pc = bicop.tau_to_param(Family.CLAYTON, 0, 0.5)
print(pc, pc.tau, bicop.tail_dependence(pc))

#%%
# Rotating by 180 degrees moves the tail dependence to the upper corner;
# 90 and 270 degree rotations carry negative dependence.
for rot in bicop.ROTATIONS:
    tau = 0.5 if rot in (0, 180) else -0.5
    r = bicop.tau_to_param(Family.CLAYTON, rot, tau)
    print(rot, round(r.tau, 3), bicop.tail_dependence(r))

#%%
# The h-function C(v | u) is the conditional distribution used to pass
# information between trees. Its inverse turns uniforms into dependent pairs.
rng = np.random.default_rng(1)
u, w = rng.uniform(size=(2, 5000))
v = bicop.hinv1(pc, u, w)
print("empirical tau", bicop.empirical_tau(np.column_stack([u, v])))

#%%
# Selection by BIC among a candidate pool, with an independence pre-test.
cands = [(Family.GAUSSIAN, 0), (Family.FRANK, 0), (Family.CLAYTON, 0), (Family.GUMBEL, 0)]
print(bicop.select_pair(np.column_stack([u, v]), cands))
print(bicop.select_pair(rng.uniform(size=(500, 2)), cands))
