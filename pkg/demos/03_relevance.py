"""Where does a trained PIF model look?

Trains one PIF desk model for a few epochs, then propagates relevance back
to the input with the alpha/beta rule. The heatmaps are started at the
output and at one patch of the PIF layer.

``python3 demos/03_relevance.py``
"""

import numpy as np

from pifnet.data import SynthSpec, generate_dataset, normalize_max, site_mean, split_subjects
from pifnet.lrp import LrpConfig, Start, heatmap
from pifnet.model import Network
from pifnet.presets import get_preset
from pifnet.training import DataSplits, TrainConfig, predict, train_one

spec = SynthSpec(n_per_class=80)
records = split_subjects(generate_dataset(spec, seed=3), seed=3)
data = DataSplits(records)

model = get_preset("pif-a-desk")
result = train_one(model, data, TrainConfig(max_epochs=15, patience=5), seed=0)
print(f"test balanced accuracy {100 * result.test_bacc:.1f}% after {result.stop_epoch} epochs")

net = Network(model)
net.set_state(result.best_state)

# %% Output relevance for one class-1 volume
# Take the class-1 test volume the model is most confident about. Positive
# relevance near the blob site means the model uses the signal where it was
# planted.
sick = [normalize_max(r.volume.astype(np.float64)) for r in records if r.label == 1 and r.split == "test"]
probs = predict(net, np.stack(sick)[:, None])
volume = sick[int(np.argmax(probs))]
print(f"chosen volume: predicted probability of class 1 {probs.max():.3f}")
out = heatmap(net, volume)
site = spec.sites[0]
print(f"mean relevance at the site {site_mean(out.volume, site):+.3e}, "
      f"elsewhere {out.volume.mean():+.3e}")

# %% Relevance from a single patch
# Starting at one bank of the PIF layer, relevance stays inside the input
# region that patch can see.
layer, state = net.pif_state()
for bank in (0, 3, state.n_banks - 1):
    rel = heatmap(net, volume, LrpConfig(start=Start(layer, 0, bank))).volume
    nz = np.argwhere(rel != 0)
    if len(nz):
        print(f"patch {bank}: nonzero relevance in box {nz.min(axis=0)} .. {nz.max(axis=0)}")
    else:
        print(f"patch {bank}: filter 0 inactive for this volume")
