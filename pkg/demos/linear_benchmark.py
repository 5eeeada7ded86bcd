# # Checking an incremental certificate on a linear system
#
# The system is xdot = -x + u with inputs in U = [-1, 1]. Two copies driven by
# the same input contract at rate 1, so V(x, y) = (x - y)^2 should decrease
# at rate 2. With different inputs the gap |u - v| enters through sigma.

import numpy as np

from incstab.certificate import (
    Sampler,
    certificate_from_dict,
    check_decrease_gas,
    check_decrease_iss,
    check_sandwich,
    trajectory_decay_check,
)
from incstab.envelope import estimate_gas_envelope, estimate_iss_gain
from incstab.metric import Euclidean
from incstab.sets import Box
from incstab.system import ControlSystem

sys_ = ControlSystem.from_strings(["-x1 + u1"], Box.cube(-1, 1, 1), name="linear")
sq = {"family": "power", "c": 1.0, "p": 2.0}
base = {"V": "(x1-y1)^2", "metric": {"kind": "euclidean"}, "alpha_lo": sq, "alpha_hi": sq}

gas = certificate_from_dict({**base, "kappa": 2.0}, 1)
iss = certificate_from_dict({**base, "kappa": 1.0, "sigma": sq}, 1, "iss")

# ## Sampled checks
#
# Every check draws 10^4 points of [-2, 2]^2 x U and reports the worst slack.
# A margin of about zero for the decrease condition is expected: for this
# system the inequality holds with equality.

sampler = Sampler(10000, seed=0)
for rep in (check_sandwich(gas, (-2, 2), sampler),
            check_decrease_gas(gas, sys_, (-2, 2), sampler),
            check_decrease_iss(iss, sys_, (-2, 2), sampler)):
    print(f"{rep.condition:20s} {rep.verdict:5s} margin {rep.margin: .3e}")

# A rate above 2 is too optimistic and fails.

too_fast = certificate_from_dict({**base, "kappa": 2.5}, 1)
print("kappa 2.5:", check_decrease_gas(too_fast, sys_, (-2, 2), sampler).verdict)

# ## Trajectory consequence
#
# If the pointwise decrease holds, V along simulated pairs with shared
# inputs stays below V(0) exp(-2t).

dc = trajectory_decay_check(gas, sys_, (-2, 2), pairs=100)
print(f"worst excess over V(0) exp(-kappa t): {dc.max_excess:.2e}")

# ## Empirical envelopes
#
# Simulated pairs give a KL envelope c r exp(-lambda t) and, with different
# inputs, a gain on the input gap. For this system both should be close to
# the exact values c = 1, lambda = 1 and gamma(r) = r.

beta_fit = estimate_gas_envelope(sys_, Euclidean())
print("beta:", beta_fit.beta.to_dict())
gain_fit = estimate_iss_gain(sys_, Euclidean(), beta_fit.beta)
print("gamma:", gain_fit.gamma.to_dict())
print("largest residual:", np.max(gain_fit.residuals()))
