"""Persistence, hourly Mean and Clear Sky on the synthetic test split.

Run: python demos/05_baselines.py
"""

# %%
from fusionsf.baseline import ClearSkyBaseline, MeanBaseline, persistence
from fusionsf.data import SynthParams, build_windows, normalize, split, synthesize
from fusionsf.evaluate import evaluate, format_table

ds = normalize(synthesize(SynthParams(n_plants=4, n_days=40, grid=(8, 8), seed=42)))
tr, _, te = split(build_windows(ds))

mean = MeanBaseline.fit(tr.y)
reports = [
    evaluate(lambda w: persistence(w.x_ts), te, "Persistence"),
    evaluate(lambda w: mean.predict(len(w)), te, "Mean"),
    evaluate(ClearSkyBaseline.fit(tr), te, "Clear Sky"),
]
print(format_table(reports))
