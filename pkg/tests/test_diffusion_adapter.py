"""Adapter import surface, plus the GPU-gated live-model check.

The live test needs downloaded pretrained weights and a CUDA device; it is
marked `gpu` and excluded from the default run.
"""

import numpy as np
import pytest
import torch

from difftrack.config import BackboneConfig
from difftrack.diffusion_adapter import _grid_side, _require_diffusers


def has_diffusers() -> bool:
    try:
        import diffusers  # noqa: F401
    except ImportError:
        return False
    return True


class TestWithoutWeights:
    def test_grid_side(self):
        assert _grid_side(16) == 4
        assert _grid_side(4096) == 64
        with pytest.raises(ValueError, match="square"):
            _grid_side(17)

    @pytest.mark.skipif(has_diffusers(), reason="diffusers is installed here")
    def test_missing_dependency_message(self):
        with pytest.raises(RuntimeError, match="diffusers"):
            _require_diffusers()

    @pytest.mark.skipif(has_diffusers(), reason="diffusers is installed here")
    def test_factory_surfaces_dependency_error(self):
        from difftrack.backbone import create_backbone

        with pytest.raises(RuntimeError, match="diffusers"):
            create_backbone(BackboneConfig(kind="diffusion-adapter"))


@pytest.fixture(scope="module")
def adapter():
    if not has_diffusers():
        pytest.skip("diffusers not installed")
    if not torch.cuda.is_available():
        pytest.skip("no CUDA device")
    from difftrack.diffusion_adapter import DiffusionAdapter

    return DiffusionAdapter(resolution=512,
                            layer_resolutions=((32, 32), (64, 64)))


@pytest.mark.gpu
class TestLiveModel:

    def test_adapt_reduces_loss_and_localizes_first_frame(self, adapter):
        from difftrack.core import EMBEDDING_DIM, EmbeddingVector, iou
        from difftrack.fuse import FusionHead
        from difftrack.harmonize import HarmonizeParams
        from difftrack.localize import map_to_box
        from difftrack.prompt_learner import (
            EmbeddingProjector,
            TrainConfig,
            adapt_specific,
            attention_forward,
            attention_loss,
            build_prompt,
        )
        from difftrack.core import BinaryMask
        from difftrack.synthetic import make_scene, render_scene

        spec = make_scene(seed=1, n_frames=2, resolution=512)
        frames, boxes = render_scene(spec)
        rng = np.random.default_rng(0)
        shared_parts = {
            "e_sh": EmbeddingVector(0.02 * rng.normal(size=EMBEDDING_DIM), "shared"),
            "projector": EmbeddingProjector(token_dim=adapter.conditioning_dim, seed=1),
            "head": FusionHead(num_layers=adapter.num_layers, seed=2),
            "harmonize": HarmonizeParams(),
        }
        from difftrack.prompt_learner import SharedArtifacts

        shared = SharedArtifacts(epoch_losses=(), **shared_parts)
        mask = BinaryMask.from_box(512, 512, boxes[0])
        cfg = TrainConfig(specific_epochs=3, specific_iters=8)

        losses = []
        for epochs in (1, 2, 3):
            partial = TrainConfig(specific_epochs=epochs, specific_iters=8)
            e_sp = adapt_specific(frames[0], boxes[0], shared, adapter,
                                  partial, seed=0)
            prompt = build_prompt(shared.e_sh, e_sp, shared.projector)
            amap = attention_forward(frames[0], prompt, adapter,
                                     shared.harmonize, shared.head)
            with torch.no_grad():
                losses.append(float(attention_loss(amap, mask,
                                                   l_dm=0.0, lambda_dm=0.0)))
        assert losses[1] <= losses[0] and losses[2] <= losses[1]

        e_sp = adapt_specific(frames[0], boxes[0], shared, adapter, cfg, seed=0)
        prompt = build_prompt(shared.e_sh, e_sp, shared.projector)
        amap = attention_forward(frames[0], prompt, adapter,
                                 shared.harmonize, shared.head)
        loc = map_to_box(amap, 512, 512, tau=0.5)
        assert iou(loc.box, boxes[0]) >= 0.5
