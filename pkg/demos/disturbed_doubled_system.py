# # From an input gain to a disturbed doubled system
#
# Given an envelope beta and gain gamma for xdot = -x + u, the scaling
# rho(r) = gamma^-1(alpha^-1(r) / 4) / 2 with alpha(r) = beta(r, 0) defines a
# doubled system whose copies see sat_U(w1 +- rho(d(x1, x2)) w2). Every
# disturbance w2 in the unit ball should still let the copies merge.

import json

from incstab.augment import augment_iss
from incstab.comparison import KInfFn, KLFn, construct_rho
from incstab.envelope import Ensemble, estimate_gas_envelope, estimate_iss_gain, validate_ugas
from incstab.errors import PreconditionError
from incstab.metric import Euclidean
from incstab.sets import Box
from incstab.system import ControlSystem

sys_ = ControlSystem.from_strings(["-x1 + u1"], Box.cube(-1, 1, 1), name="linear")

# ## The closed-form case
#
# beta(r, t) = 2r exp(-t) and gamma = id give rho(r) = r / 16.

print(construct_rho(KLFn(KInfFn.linear(2.0), 1.0), KInfFn.linear(1.0)))

# An envelope with beta(r, 0) <= r is refused rather than silently fixed.

try:
    construct_rho(KLFn(KInfFn.linear(1.0), 1.0), KInfFn.linear(1.0))
except PreconditionError as e:
    print("refused:", e)

# ## Fitted functions
#
# The fitted envelope of this system touches the identity at t = 0, so it is
# doubled before building rho.

beta = estimate_gas_envelope(sys_, Euclidean()).beta
gamma = estimate_iss_gain(sys_, Euclidean(), beta).gamma
rho = construct_rho(beta.scaled(2.0), gamma)
print("rho:", rho.to_dict())

asys = augment_iss(sys_, Euclidean(), rho)
print(json.dumps(asys.to_dict()["field"], indent=1))

# ## Uniform convergence to the diagonal
#
# 200 random disturbances over a horizon of 10; the diagonal distance
# d(x1, x2) is fitted by a KL envelope.

fit = validate_ugas(asys, Ensemble(pairs=200, horizon=10.0))
print(fit.verdict, fit.beta.to_dict())
