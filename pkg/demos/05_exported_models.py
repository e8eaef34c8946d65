"""Plugging in exported models (requires the optional 'torch' dependency).

Two exchange points accept TorchScript archives: the feature extractor (K
named intermediate maps, average-pooled per scale) and the downstream
per-A-scan heatmap estimator. This demo builds tiny stand-in networks, saves
them, and runs both paths; a real deployment would export its pretrained
backbone and trained estimator the same way.

Run from the repo root:  python demos/05_exported_models.py
"""

from pathlib import Path

import numpy as np
import torch

import octgate
from octgate.downstream import exported_heatmap, ilm_from_heatmap
from octgate.features import ExportedNetworkExtractor

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)


# %% A miniature multi-scale backbone exposing two named feature maps. Tap
# points are configuration, not code: list the output names you want pooled.
class TinyBackbone(torch.nn.Module):
    def __init__(self):
        super().__init__()
        self.conv1 = torch.nn.Conv2d(3, 16, 3, padding=1)
        self.conv2 = torch.nn.Conv2d(16, 48, 3, stride=2, padding=1)

    def forward(self, x):
        a = torch.relu(self.conv1(x))
        b = torch.relu(self.conv2(a))
        return {"shallow": a, "deep": b}


torch.manual_seed(0)
backbone_path = OUT / "tiny_backbone.pt"
torch.jit.save(torch.jit.script(TinyBackbone().eval()), str(backbone_path))

extractor = ExportedNetworkExtractor(backbone_path, ["shallow", "deep"])
extractor.probe(64, 224)
print(f"exported extractor: K={extractor.k}, dims={extractor.dims}")

# %% The exported extractor drops into the same fit/score pipeline.
train = [lab.mscan for lab in octgate.synth_dataset(80, seed=1)]
model = octgate.fit_detector(train, extractor)
probe = octgate.synth_mscan(rng=np.random.default_rng(2))
noisy = octgate.corrupt(
    octgate.rescale_to_byte_range(probe.mscan),
    octgate.CorruptionSpec(kind="noise", seed=3),
)
print(f"clean score {octgate.score(probe.mscan, model, extractor).score:.2f}  "
      f"noisy score {octgate.score(noisy, model, extractor).score:.2f}")


# %% An exported heatmap estimator: any (P,) -> (P,) TorchScript module.
# Raw outputs are clamped into [0, 1]; argmax gives the ILM depth estimate.
class EdgeNet(torch.nn.Module):
    def forward(self, x):
        smoothed = torch.nn.functional.avg_pool1d(
            x.reshape(1, 1, -1), kernel_size=7, stride=1, padding=3
        ).reshape(-1)
        grad = torch.zeros_like(smoothed)
        grad[:-1] = smoothed[1:] - smoothed[:-1]
        rectified = torch.clamp(grad, min=0.0)
        return rectified / (rectified.max() + 1e-6)


estimator_path = OUT / "edge_net.pt"
torch.jit.save(torch.jit.script(EdgeNet().eval()), str(estimator_path))

ascan = probe.mscan.ascan(0)
heatmap = exported_heatmap(ascan, estimator_path)
estimate = ilm_from_heatmap(heatmap, probe.mscan.depth_resolution_um)
truth = int(probe.ilm_truth[0])
print(
    f"exported estimator: ILM at {estimate.index}px "
    f"({estimate.distance_um:.0f} um), truth {truth}px, "
    f"confidence {estimate.confidence:.2f}"
)
