"""Regenerate stats_reference.json with SciPy as the reference implementation.

    python3 gen_stats_reference.py > stats_reference.json
"""
import json

import numpy as np
from scipy import stats

rng = np.random.default_rng(20240611)


def draw(n):
    kind = rng.integers(0, 4)
    if kind == 0:
        x = rng.normal(rng.uniform(-5, 5), rng.uniform(0.1, 3), n)
    elif kind == 1:
        x = rng.uniform(0, 1, n)
    elif kind == 2:
        x = rng.exponential(2.0, n)
    else:
        x = np.concatenate([rng.normal(0, 1, n // 2), rng.normal(6, 1, n - n // 2)])
    return [float(v) for v in x]


def sw(x):
    r = stats.shapiro(x)
    return {"x": x, "w": float(r.statistic), "p": float(r.pvalue)}


def tt(a, b):
    welch = stats.ttest_ind(a, b, equal_var=False)
    student = stats.ttest_ind(a, b, equal_var=True)
    return {
        "a": a,
        "b": b,
        "welch_t": float(welch.statistic),
        "welch_p": float(welch.pvalue),
        "student_t": float(student.statistic),
        "student_p": float(student.pvalue),
    }


shapiro = [sw(draw(int(rng.integers(3, 51)))) for _ in range(50)]
ttests = [tt(draw(int(rng.integers(3, 51))), draw(int(rng.integers(3, 51)))) for _ in range(50)]

probe10 = [2.1, 3.4, 1.9, 5.6, 4.4, 3.3, 2.8, 4.1, 3.9, 2.2]
jitter = rng.normal(0, 0.5, 20)
bimodal20 = [float(v) for v in np.concatenate([0 + jitter[:10], 100 + jitter[10:]])]
group_a = [0.71, 0.74, 0.69, 0.73, 0.72]
group_b = [0.52, 0.60, 0.49, 0.55, 0.51]

print(
    json.dumps(
        {
            "shapiro": shapiro,
            "ttest": ttests,
            "shapiro_probe10": sw(probe10),
            "shapiro_bimodal20": sw(bimodal20),
            "ttest_probe5": tt(group_a, group_b),
        },
        indent=1,
    )
)
