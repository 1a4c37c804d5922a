"""Generation backends.

The stub backend echoes each conditioning map to its output path, so the
adapter is fully testable without model weights. The real backend drives a
pretrained boundary-conditioned Stable Diffusion pipeline through the
``diffusers`` library; its dependencies and weights are checked up front so
a misconfigured install fails at startup, not mid-run.
"""

from __future__ import annotations

import shutil
from pathlib import Path


class StartupError(RuntimeError):
    """The backend cannot start (missing weights or libraries)."""


class StubBackend:
    """Copies the conditioning map to the output path. Deterministic."""

    model_id = "stub-echo-v1"

    def generate(
        self, conditioning_path: Path, output_path: Path, prompt: str,
        negative_prompt: str, seed: int,
    ) -> None:
        output_path.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(conditioning_path, output_path)


class RealBackend:
    """Boundary-conditioned image generation with pretrained weights.

    ``weights_dir`` must hold a diffusers-format pipeline with a boundary
    (soft-edge) conditioning branch. Sampler steps and guidance scale are
    plain settings; defaults are sensible, not canonical.
    """

    def __init__(
        self,
        weights_dir: str | Path | None,
        steps: int = 30,
        guidance_scale: float = 7.5,
        device: str = "cpu",
    ):
        if weights_dir is None:
            raise StartupError("the real backend needs --weights <dir>")
        weights_dir = Path(weights_dir)
        if not weights_dir.is_dir():
            raise StartupError(f"model weights directory not found: {weights_dir}")
        try:
            import torch  # noqa: F401
            from diffusers import StableDiffusionControlNetPipeline
        except ImportError as e:
            raise StartupError(
                f"the real backend needs torch + diffusers installed: {e}"
            ) from e
        from PIL import Image  # noqa: F401

        self._torch = torch
        self._image_cls = Image
        self.steps = steps
        self.guidance_scale = guidance_scale
        self.device = device
        self.model_id = f"local:{weights_dir.name}"
        self._pipe = StableDiffusionControlNetPipeline.from_pretrained(
            str(weights_dir)
        ).to(device)

    def generate(
        self, conditioning_path: Path, output_path: Path, prompt: str,
        negative_prompt: str, seed: int,
    ) -> None:
        conditioning = self._image_cls.open(conditioning_path).convert("RGB")
        generator = self._torch.Generator(device=self.device).manual_seed(seed)
        result = self._pipe(
            prompt,
            image=conditioning,
            negative_prompt=negative_prompt,
            num_inference_steps=self.steps,
            guidance_scale=self.guidance_scale,
            generator=generator,
        )
        output_path.parent.mkdir(parents=True, exist_ok=True)
        result.images[0].save(output_path)


def make_backend(name: str, weights: str | None, steps: int, guidance_scale: float,
                 device: str = "cpu"):
    if name == "stub":
        return StubBackend()
    if name == "real":
        return RealBackend(weights, steps=steps, guidance_scale=guidance_scale, device=device)
    raise StartupError(f"unknown backend {name!r} (choose 'stub' or 'real')")
