# # A system that is only incrementally stable in other coordinates
#
# xdot = -1 + u with u in [-0.5, 0.5] never converges: x(t) drifts to minus
# infinity and two copies with the same input keep their Euclidean distance
# forever. Under the metric d(x, y) = |exp(x) - exp(y)| the same pairs do
# approach each other, because exp(x(t)) shrinks at least like exp(-t/2).

from incstab.certificate import (
    Budget,
    Sampler,
    certificate_from_dict,
    check_decrease_gas,
    check_sandwich,
    falsify,
    gas_decrease_condition,
)
from incstab.envelope import estimate_gas_envelope
from incstab.metric import Euclidean, Pullback
from incstab.sets import Box
from incstab.system import ControlSystem

drift = ControlSystem.from_strings(["-1 + u1"], Box.cube(-0.5, 0.5, 1), name="drift")
sq = {"family": "power", "c": 1.0, "p": 2.0}

# ## The Euclidean candidate is falsified
#
# The falsifier samples, then climbs the violation by coordinate ascent.

for kappa in (0.01, 0.1, 1.0):
    cert = certificate_from_dict({"V": "(x1-y1)^2", "metric": {"kind": "euclidean"},
                                  "alpha_lo": sq, "alpha_hi": sq, "kappa": kappa}, 1)
    cex = falsify(gas_decrease_condition(cert, drift, (-2, 2)), Budget(samples=10000))
    print(f"kappa {kappa:5}: violation {cex.violation:.4f} at {cex.witness}")

# ## The pulled-back candidate passes
#
# V(x, y) = (exp(x) - exp(y))^2 is the squared pullback distance, so the
# sandwich bounds hold with alpha(r) = r^2 and the decrease rate is 1.

pb = certificate_from_dict({"V": "(exp(x1)-exp(y1))^2", "metric": {"kind": "pullback", "map": ["exp(x1)"]},
                            "alpha_lo": sq, "alpha_hi": sq, "kappa": 1.0}, 1)
s = Sampler(10000)
print(check_sandwich(pb, (-2, 2), s).verdict, check_decrease_gas(pb, drift, (-2, 2), s).verdict)

# ## Envelopes in both metrics
#
# Under the pullback metric the fitted decay rate sits at the worst-case
# input u = 0.5, i.e. lambda = 0.5. The Euclidean distances never decay, so
# no member of the family dominates them.

print("pullback:", estimate_gas_envelope(drift, Pullback.from_strings(["exp(x1)"])).beta.to_dict())
print("euclidean:", estimate_gas_envelope(drift, Euclidean()).verdict)
