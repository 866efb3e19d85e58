"""Compare the general best-of-three BT model with CLM4 on data drawn from each.

With its threshold estimated, CLM4 can mimic the general BT model closely, so
on general-BT data the two often sit within a couple of AIC units.
"""

from paircomp.models import make_model
from paircomp.selection import CandidateModel, compare_models
from paircomp.simulate import simulate

cands = [CandidateModel.from_spec("general_bt_bo3"), CandidateModel.from_spec("clm4")]
for gen in ("general_bt_bo3", {"name": "clm4", "params": {"tau": 2.5}}):
    _, ds = simulate(80, 0.5, make_model(gen), seed=3)
    rep = compare_models(ds, cands)
    print(f"data from {gen if isinstance(gen, str) else gen['name']}:")
    print(rep.table())
    print()
