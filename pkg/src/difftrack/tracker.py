"""The assembled tracker behind a two-call protocol: reset, then update.

reset() runs the first-frame adaptation and builds fresh per-sequence state;
update() consumes frames in order.  The three ablation switches disable the
prompt updater, the self-attention harmonization, and the frequency motion
branch without touching the rest of the pipeline, so their effect can be
measured in isolation.
"""

from typing import Optional

import torch

from .core import BoundingBox, FrameRGB, TrackerState
from .harmonize import HarmonizeParams
from .motion import MotionModule, make_views
from .prompt_learner import SharedArtifacts, TrainConfig, adapt_specific, build_prompt
from .updater import BlendHead, TrackerModules, UpdateSchedule, step

__all__ = ["DiffTracker"]

# a start frame no sequence reaches, used when the updater is switched off
_NEVER = 10 ** 9


class DiffTracker:
    """Prompt-based tracker over a diffusion attention backbone.

    Frame indices at this interface are 0-based (evaluation convention);
    internally the first frame of a sequence is frame 1.
    """

    def __init__(self, backbone, shared: SharedArtifacts,
                 motion: Optional[MotionModule] = None,
                 blend: Optional[BlendHead] = None,
                 schedule: Optional[UpdateSchedule] = None,
                 adapt: Optional[TrainConfig] = None,
                 tau: float = 0.5, timestep: Optional[int] = None,
                 window: int = 8, seed: int = 0,
                 use_updater: bool = True, use_harmonization: bool = True,
                 use_frequency: bool = True):
        if not use_harmonization:
            # pin the blend to the raw cross-attention map; the enhanced map's
            # contribution underflows away instead of needing a second code path
            shared = shared._replace(harmonize=HarmonizeParams(alpha=1.0 - 1e-12))
        if motion is None:
            motion = MotionModule()
        if blend is None:
            blend = BlendHead(num_tokens=shared.projector.num_tokens,
                              token_dim=shared.projector.token_dim)
        if schedule is None:
            schedule = UpdateSchedule()
        if not use_updater:
            schedule = UpdateSchedule(start_frame=_NEVER, interval=schedule.interval)
        self.shared = shared
        self.adapt_cfg = adapt if adapt is not None else TrainConfig()
        self.window = window
        self.seed = seed
        self.modules = TrackerModules(
            backbone=backbone, shared=shared, motion=motion, blend=blend,
            schedule=schedule, tau=tau, timestep=timestep,
            use_freq=use_frequency,
        )
        self.state: Optional[TrackerState] = None

    def reset(self, frame: FrameRGB, box: BoundingBox, frame_index: int = 0):
        """Adapt to the target in this frame and restart sequence state."""
        e_sp = adapt_specific(frame, box, self.shared, self.modules.backbone,
                              self.adapt_cfg, seed=self.seed)
        prompt = build_prompt(self.shared.e_sh, e_sp, self.shared.projector)
        with torch.no_grad():
            template = self.modules.motion.template_extractor(frame, box)
        self.state = TrackerState(prompt=prompt, frame_index=frame_index + 1,
                                  template=template, window=self.window,
                                  last_box=box)
        views = make_views(frame)
        self.state.push_history(views.rgb, views.freq)

    def update(self, frame: FrameRGB, frame_index: int) -> BoundingBox:
        """Track one frame; frames must arrive in order after a reset."""
        if self.state is None:
            raise RuntimeError("update() before reset()")
        with torch.no_grad():
            _, box, amap = step(self.state, frame, self.modules,
                                frame_index=frame_index + 1)
        self.last_map = amap
        return box
