"""
Why equal patrols still under-detect a higher-crime group
=========================================================

Detection probability grows with patrol presence, from 0.30 with no units
to 0.90 with the whole budget. A group that carries more crime spread over
more zones gets a lower share of its incidents recorded, even at parity.
"""

# %%
import numpy as np

from fairpatrol.metrics import metric_bundle
from fairpatrol.simulator import detection_probability, observe

print("P = 0, 30, 60 ->", detection_probability(np.array([0.0, 30.0, 60.0])))

# %%
# Four zones, one hour. The minority group has two active zones at twice
# the majority rate; each group's patrol sits on one of its zones.
mask = np.array([True, True, False, False])
y_true = np.array([[2.0], [2.0], [2.0], [0.0]])
P = np.array([[30.0, 0.0, 30.0, 0.0]])
y_obs = observe(y_true, detection_probability(P))
m = metric_bundle(P, np.ones((1, 4)), y_true, y_obs, mask)
print(f"group patrol means {m.patrol_min_mean:.1f} / {m.patrol_maj_mean:.1f}")
print(f"detection ratio    {m.det_min:.3f} (minority) / {m.det_maj:.3f} (majority)")

# %%
# Half the minority incidents happen where no unit stands, so they are
# recorded at the 0.30 floor: (0.6 * 2 + 0.3 * 2) / 4 = 0.45 < 0.60.
# The shortfall feeds back: retraining on observed counts teaches the model
# that those zones are quieter than they are.
