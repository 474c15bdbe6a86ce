"""Per-group label proportions, averaged over subjects rather than utterances.

A subject with many utterances must not dominate its group, so each
subject's flag rates are computed first and then averaged. The second half
shows how far pooled counting drifts from that on a skewed toy table.
"""

import numpy as np

from emocog.metrics import CATEGORIES, GroupLabelTable, group_proportions

rng = np.random.default_rng(0)
rates = {"depression": (0.45, 0.02, 0.12, 0.15, 0.2), "anxiety": (0.35, 0.01, 0.1, 0.1, 0.12),
         "healthy": (0.2, 0.005, 0.05, 0.06, 0.1)}
subjects, utterances = {}, []
for group, p in rates.items():
    for k in range(6):
        sid = f"{group[:3]}{k}"
        subjects[sid] = group
        n = int(rng.integers(5, 80))  # uneven interview lengths
        for _ in range(n):
            utterances.append((sid, tuple(bool(x) for x in rng.random(5) < p)))

props = group_proportions(GroupLabelTable(subjects, utterances))
print(f"{'group':12s}" + "".join(f"{c:>13s}" for c in CATEGORIES))
for group, row in props.items():
    print(f"{group:12s}" + "".join(f"{row[c]:13.3f}" for c in CATEGORIES))

print("\npooled over utterances instead (what the subject-level mean avoids):")
for group in rates:
    flags = np.array([f for s, f in utterances if subjects[s] == group], dtype=float)
    print(f"{group:12s}" + "".join(f"{v:13.3f}" for v in flags.mean(axis=0)))
