"""Adapter exposing a pretrained text-to-image latent diffusion model.

Wraps a frozen VAE plus conditional UNet behind the AttentionBackbone
contract: frames are VAE-encoded, one conditioned denoising pass runs at the
requested timestep, and custom attention processors record the per-layer
probabilities on the way through.  Decoder (up-block) transformer blocks are
exposed; the config's layer list selects them by cross-map resolution.

Needs the optional `diffusion` dependency set plus downloaded weights, and
realistically a GPU.  Nothing here is touched by the hermetic test suite
beyond import and error-path checks.
"""

import math

import numpy as np
import torch

from .backbone import AttentionBackbone, AttentionBundle, LatentCode
from .core import AttentionMap, FrameRGB, Prompt, SelfAttentionTensor

__all__ = ["DiffusionAdapter"]


def _require_diffusers():
    try:
        import diffusers
    except ImportError as exc:
        raise RuntimeError(
            "the diffusion-adapter backbone needs the 'diffusers' package; "
            "install the [diffusion] extra") from exc
    return diffusers


def _grid_side(q_len: int) -> int:
    side = int(round(math.sqrt(q_len)))
    if side * side != q_len:
        raise ValueError(f"query length {q_len} is not a square grid")
    return side


class _CaptureProcessor:
    """Attention processor that also stores the probability matrix."""

    def __init__(self, store: dict, key: str):
        self.store = store
        self.key = key

    def __call__(self, attn, hidden_states, encoder_hidden_states=None,
                 attention_mask=None, **kwargs):
        context = hidden_states if encoder_hidden_states is None else encoder_hidden_states
        q = attn.head_to_batch_dim(attn.to_q(hidden_states))
        k = attn.head_to_batch_dim(attn.to_k(context))
        v = attn.head_to_batch_dim(attn.to_v(context))
        probs = attn.get_attention_scores(q, k, attention_mask)
        self.store[self.key] = probs
        out = attn.batch_to_head_dim(torch.bmm(probs, v))
        out = attn.to_out[0](out)
        return attn.to_out[1](out)


class DiffusionAdapter(AttentionBackbone):
    def __init__(self, model_id: str = "stabilityai/stable-diffusion-2-1-base",
                 device: str = "cuda", resolution: int = 512,
                 layer_resolutions: tuple = (), default_timestep: int = 50):
        diffusers = _require_diffusers()
        self._model_id = model_id
        self._device = torch.device(device)
        self._resolution = int(resolution)
        self.default_timestep = int(default_timestep)

        self._vae = diffusers.AutoencoderKL.from_pretrained(
            model_id, subfolder="vae").to(self._device).eval()
        self._unet = diffusers.UNet2DConditionModel.from_pretrained(
            model_id, subfolder="unet").to(self._device).eval()
        self._scheduler = diffusers.DDPMScheduler.from_pretrained(
            model_id, subfolder="scheduler")
        for module in (self._vae, self._unet):
            for p in module.parameters():
                p.requires_grad_(False)

        self._captured: dict = {}
        self._blocks = self._install_processors(layer_resolutions)
        if not self._blocks:
            raise ValueError(
                f"no decoder attention blocks match resolutions {layer_resolutions}")

        acp = self._scheduler.alphas_cumprod.to(self._device, torch.float32)
        self._sqrt_acp = acp.sqrt()
        self._sqrt_one_minus_acp = (1.0 - acp).sqrt()

    def _install_processors(self, layer_resolutions) -> list:
        """Swap processors into decoder transformer blocks, resolution-filtered.

        Returns the kept block keys in network order; each key identifies an
        (attn1, attn2) pair inside one BasicTransformerBlock.
        """
        wanted = {int(rc) for rc, _ in layer_resolutions} if layer_resolutions else None
        latent = self._resolution // 8
        # up_blocks[i] attention runs at latent / 2^(levels-1-i) for SD-style UNets
        levels = len(self._unet.up_blocks)
        kept = []
        procs = dict(self._unet.attn_processors)
        for name in self._unet.attn_processors:
            if not name.startswith("up_blocks."):
                continue
            level = int(name.split(".")[1])
            side = latent >> (levels - 1 - level)
            if wanted is not None and side not in wanted:
                continue
            block = name.rsplit(".", 2)[0]  # strip ".attn1.processor" etc.
            if name.endswith(".attn1.processor"):
                procs[name] = _CaptureProcessor(self._captured, block + ".self")
                if block not in kept:
                    kept.append(block)
            elif name.endswith(".attn2.processor"):
                procs[name] = _CaptureProcessor(self._captured, block + ".cross")
                if block not in kept:
                    kept.append(block)
        self._unet.set_attn_processor(procs)
        return kept

    # --- contract properties ---

    @property
    def conditioning_dim(self) -> int:
        return int(self._unet.config.cross_attention_dim)

    @property
    def num_layers(self) -> int:
        return len(self._blocks)

    @property
    def input_resolution(self) -> int:
        return self._resolution

    @property
    def max_timestep(self) -> int:
        return int(self._scheduler.config.num_train_timesteps)

    # --- contract operations ---

    def encode_image(self, frame: FrameRGB) -> LatentCode:
        self.check_frame(frame)
        px = torch.as_tensor(np.array(frame.pixels), dtype=torch.float32,
                             device=self._device)
        px = px.permute(2, 0, 1)[None] * 2.0 - 1.0
        with torch.no_grad():
            posterior = self._vae.encode(px).latent_dist
            latent = posterior.mean * self._vae.config.scaling_factor
        return LatentCode(latent, backbone_id=self._model_id)

    def _tokens(self, prompt: Prompt) -> torch.Tensor:
        self.check_prompt(prompt)
        tokens = prompt.tokens
        if not isinstance(tokens, torch.Tensor):
            tokens = torch.as_tensor(np.asarray(tokens), dtype=torch.float32)
        return tokens.to(self._device, torch.float32)[None]

    def _noisy(self, latent: LatentCode, t: int, generator=None) -> torch.Tensor:
        noise = torch.randn(latent.values.shape, generator=generator,
                            device=self._device, dtype=torch.float32)
        return self._sqrt_acp[t] * latent.values + self._sqrt_one_minus_acp[t] * noise

    def attend(self, latent: LatentCode, prompt: Prompt,
               t: int | None = None) -> AttentionBundle:
        t = self.check_timestep(self.default_timestep if t is None else t)
        tokens = self._tokens(prompt)
        self._captured.clear()
        g = torch.Generator(device=self._device).manual_seed(t)
        noisy = self._noisy(latent, t, generator=g)
        self._unet(noisy, t, encoder_hidden_states=tokens)
        cross, self_ = [], []
        for block in self._blocks:
            c = self._captured[block + ".cross"]  # (heads, q, tokens)
            s = self._captured[block + ".self"]   # (heads, q, q)
            side = _grid_side(c.shape[1])
            cmap = c.mean(dim=(0, 2)).reshape(side, side)
            smap = s.mean(dim=0).reshape(side, side, side, side)
            cross.append(AttentionMap(cmap))
            self_.append(SelfAttentionTensor(smap))
        return AttentionBundle(cross, self_)

    def denoise_loss(self, latent: LatentCode, prompt: Prompt, noise,
                     t: int | None = None):
        t = self.check_timestep(self.default_timestep if t is None else t)
        tokens = self._tokens(prompt)
        if not isinstance(noise, torch.Tensor):
            noise = torch.as_tensor(np.asarray(noise), dtype=torch.float32)
        noise = noise.to(self._device, torch.float32).reshape(latent.values.shape)
        noisy = self._sqrt_acp[t] * latent.values + self._sqrt_one_minus_acp[t] * noise
        pred = self._unet(noisy, t, encoder_hidden_states=tokens).sample
        return torch.mean((pred - noise) ** 2)

    def state_tensors(self) -> dict:
        # identity only; hashing gigabytes of frozen weights buys nothing
        return {"model_tag": np.frombuffer(
            self._model_id.encode("utf-8").ljust(64, b"\0")[:64], dtype=np.uint8
        ).astype(np.float64)}

    @classmethod
    def from_config(cls, cfg) -> "DiffusionAdapter":
        return cls(model_id=cfg.model_id, device=cfg.device,
                   resolution=cfg.resolution, layer_resolutions=cfg.layers,
                   default_timestep=cfg.timestep)
