"""Turn an ATP-style results file into a cleaned dataset and fit it."""

import io

from paircomp.estimator import fit_newton
from paircomp.existence import check_condition1
from paircomp.ingest import clean_never_win_lose, load_matches, to_dataset
from paircomp.models import make_model

raw = """Winner,Loser,Wsets,Lsets,Comment
Agassi A.,Becker B.,2,0,Completed
Becker B.,Chang M.,2,1,Completed
Chang M.,Agassi A.,2,1,Completed
Agassi A.,Chang M.,2,0,Completed
Becker B.,Agassi A.,2,1,Completed
Agassi A.,Edberg S.,3,1,Completed
Chang M.,Becker B.,1,0,Retired
Agassi A.,Forget G.,2,0,Completed
"""

table = load_matches(io.StringIO(raw))
print("row counts:", table.counts)
cleaned = clean_never_win_lose(to_dataset(table))
print("removed:", cleaned.removed, "after", cleaned.rounds, "round(s)")
ds = cleaned.dataset
model = make_model("general_bt_bo3")
print("existence:", check_condition1(ds, model=model).holds)
res = fit_newton(ds, model)
for name, score in sorted(zip(ds.labels, res.estimate), key=lambda t: -t[1]):
    print(f"  {name:<12} {score:+.3f}")
