"""
Critical sets from cuts, and the factor-of-two result
=====================================================

Every cut of the grid whose two sides stay connected gives a critical set:
the flow meters on the cut lines plus the injections at their endpoints.
Split such a set roughly in half. Holding either half is enough to move the
estimate along the direction the full set could move it, via framing.
"""

import numpy as np

from gridframe.dcmodel import build_model
from gridframe.netmodel import load_case
from gridframe.observability import (critical_set_from_cut, find_cuts_contraction,
                                     half_partition, is_critical_set)
from gridframe.oracle import check_half_partition, make_partition

net = load_case("ieee14")
model = build_model(net)

cuts = find_cuts_contraction(net, 20000, rng_seed=2024)
sizes = [len(critical_set_from_cut(c, net)) for c in cuts]
print(f"{len(cuts)} distinct cuts, mean critical set size {np.mean(sizes):.2f}")

holds = 0
for c in cuts:
    S = critical_set_from_cut(c, net)
    assert is_critical_set(S, model)
    part = half_partition(S, c, net)
    chk = check_half_partition(model, make_partition(model, part.s1, part.s2))
    holds += bool(chk.condition)
print(f"half-partition condition holds on {holds} of {len(cuts)} cuts")

# the smallest example, isolating bus 3
b3 = net.bus_by_name[3]
c = next(c for c in cuts if c.side_b == {b3})
S = critical_set_from_cut(c, net)
part = half_partition(S, c, net)
print("\nbus-3 cut:", ",".join(net.label(m) for m in S))
print("  S1 =", ",".join(net.label(m) for m in part.s1))
print("  S2 =", ",".join(net.label(m) for m in part.s2))
chk = check_half_partition(model, make_partition(model, part.s1, part.s2))
print(chk.result.report(net, model.layout))
