"""
Preference statistics
=====================

Five-level pairwise preferences become soft scores; the z-test asks whether
the mean differs from 50 and the proportion test whether the hard vote share
differs from one half. The exact binomial test is shown for comparison.
"""

import numpy as np

from csglip.evalstat import (binomial_p_value, cronbach_alpha, hard_proportion, preference_report,
                             preference_soft, proportion_test)
from csglip.numcore import make_rng

answers = ["definitely-1", "moderately-1", "tie", "moderately-2"]
scores = [preference_soft(a)[0] for a in answers]
print("scores", scores, "hard proportion", hard_proportion(scores))

rng = make_rng(0, "preference-demo")
rec = rng.choice([0, 25, 50, 75, 100], size=40, p=[0.1, 0.15, 0.2, 0.3, 0.25])
report = preference_report(rec)
print(f"mean {report['mean']:.1f}, z-test p {report['z_test']['p_value']:.4f}, "
      f"proportion {report['hard_proportion']:.3f} (p {report['proportion_test']['p_value']:.4f})")

# with the continuity correction the normal test tracks the exact binomial closely at n = 40
n = 40
worst = max(abs(proportion_test(k / n, n)[1] - binomial_p_value(k, n)) for k in range(n + 1))
plain = max(abs(proportion_test(k / n, n, continuity=False)[1] - binomial_p_value(k, n)) for k in range(n + 1))
print(f"largest gap to the exact binomial: corrected {worst:.4f}, uncorrected {plain:.4f}")

# agreement between four raters on twenty items that share a common signal
truth = rng.normal(size=20)
ratings = truth[:, None] + 0.5 * rng.normal(size=(20, 4))
print(f"Cronbach's alpha {cronbach_alpha(ratings):.2f}")
