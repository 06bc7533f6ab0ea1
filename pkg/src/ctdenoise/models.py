"""Denoiser backbones behind a uniform build/forward/checkpoint interface.

The networks are ordinary image-to-image CNNs with no receptive-field
restriction: the blind-spot property is enforced purely by masking the
input, never by the architecture. ``unet_bn`` is the classic double-conv
U-Net with batch normalization (~31M parameters at its default width);
``small_unet`` is a lean single-conv-per-stage variant sized so the test
suite trains in minutes on a CPU; ``plain_cnn`` is a flat conv stack.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .errors import ConfigurationError

# architecture -> (default base channels, default depth, convs per stage)
ARCHITECTURES = {
    "unet_bn": (64, 4, 2),
    "small_unet": (16, 3, 1),
    "plain_cnn": (32, 5, 1),
}


@dataclass(frozen=True)
class DenoiserSpec:
    architecture: str
    channels: int
    depth: int

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigurationError(
                f"unsupported architecture {self.architecture!r}; "
                f"choose one of {sorted(ARCHITECTURES)}"
            )
        if self.channels < 1 or self.depth < 1:
            raise ConfigurationError("channels and depth must be positive")

    @classmethod
    def named(cls, architecture: str, channels: int | None = None, depth: int | None = None):
        """Spec with the architecture's default width/depth unless overridden."""
        if architecture not in ARCHITECTURES:
            raise ConfigurationError(
                f"unsupported architecture {architecture!r}; "
                f"choose one of {sorted(ARCHITECTURES)}"
            )
        base_channels, base_depth, _ = ARCHITECTURES[architecture]
        return cls(architecture, channels or base_channels, depth or base_depth)

    @property
    def divisor(self) -> int:
        """Input sides must be divisible by this (1 = unconstrained)."""
        if self.architecture == "plain_cnn":
            return 1
        return 2**self.depth


@dataclass
class DenoiserState:
    """A network plus its spec and the number of optimizer updates applied."""

    network: nn.Module
    spec: DenoiserSpec
    step_count: int = 0


def _conv_block(cin: int, cout: int, n_convs: int) -> nn.Sequential:
    layers = []
    for i in range(n_convs):
        layers += [
            nn.Conv2d(cin if i == 0 else cout, cout, 3, padding=1, bias=False),
            nn.BatchNorm2d(cout),
            nn.ReLU(inplace=True),
        ]
    return nn.Sequential(*layers)


class _UNet(nn.Module):
    def __init__(self, base: int, depth: int, n_convs: int):
        super().__init__()
        self.depth = depth
        self.inc = _conv_block(1, base, n_convs)
        downs = []
        ch = base
        for _ in range(depth):
            downs.append(nn.Sequential(nn.MaxPool2d(2), _conv_block(ch, ch * 2, n_convs)))
            ch *= 2
        self.downs = nn.ModuleList(downs)
        ups, dec = [], []
        for _ in range(depth):
            ups.append(nn.ConvTranspose2d(ch, ch // 2, 2, stride=2))
            dec.append(_conv_block(ch, ch // 2, n_convs))
            ch //= 2
        self.ups = nn.ModuleList(ups)
        self.dec = nn.ModuleList(dec)
        self.out = nn.Conv2d(ch, 1, 1)

    def forward(self, x):
        feats = [self.inc(x)]
        for down in self.downs:
            feats.append(down(feats[-1]))
        h = feats[-1]
        for i, (up, dec) in enumerate(zip(self.ups, self.dec)):
            h = up(h)
            h = dec(torch.cat([feats[-2 - i], h], dim=1))
        return self.out(h)


class _PlainCNN(nn.Module):
    def __init__(self, channels: int, depth: int):
        super().__init__()
        layers = [nn.Conv2d(1, channels, 3, padding=1), nn.ReLU(inplace=True)]
        for _ in range(depth - 1):
            layers += [
                nn.Conv2d(channels, channels, 3, padding=1, bias=False),
                nn.BatchNorm2d(channels),
                nn.ReLU(inplace=True),
            ]
        layers.append(nn.Conv2d(channels, 1, 3, padding=1))
        self.body = nn.Sequential(*layers)

    def forward(self, x):
        return self.body(x)


def _make_network(spec: DenoiserSpec) -> nn.Module:
    if spec.architecture == "plain_cnn":
        return _PlainCNN(spec.channels, spec.depth)
    _, _, n_convs = ARCHITECTURES[spec.architecture]
    return _UNet(spec.channels, spec.depth, n_convs)


def build_denoiser(spec: DenoiserSpec, rng_seed: int = 0) -> DenoiserState:
    """Instantiate a backbone with a deterministic, seed-controlled init."""
    if spec.architecture not in ARCHITECTURES:
        raise ConfigurationError(f"unsupported architecture {spec.architecture!r}")
    with torch.random.fork_rng():
        torch.manual_seed(rng_seed)
        network = _make_network(spec)
    return DenoiserState(network=network, spec=spec, step_count=0)


def parameter_count(state: DenoiserState) -> int:
    return sum(p.numel() for p in state.network.parameters())


def _to_batch(batch: np.ndarray) -> tuple[torch.Tensor, bool]:
    arr = np.asarray(batch, dtype=np.float32)
    single = arr.ndim == 2
    if single:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"expected (H, W) or (N, H, W) input, got shape {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr)).unsqueeze(1), single


def check_divisibility(spec: DenoiserSpec, shape: tuple) -> None:
    d = spec.divisor
    h, w = shape[-2], shape[-1]
    if h % d or w % d:
        raise ValueError(
            f"input sides {h}x{w} must be divisible by {d} "
            f"(= 2^depth for {spec.architecture})"
        )


def forward(state: DenoiserState, batch: np.ndarray, training_mode: bool = False) -> np.ndarray:
    """Run the network on a (H, W) image or (N, H, W) stack, numpy in/out.

    In evaluation mode (the default) normalization layers use their
    accumulated statistics and the pass is deterministic. No gradients are
    tracked either way; the training loop drives the module directly.
    """
    tensor, single = _to_batch(batch)
    check_divisibility(state.spec, tensor.shape)
    net = state.network
    was_training = net.training
    net.train(training_mode)
    try:
        with torch.no_grad():
            out = net(tensor)
    finally:
        net.train(was_training)
    result = out.squeeze(1).numpy()
    return result[0] if single else result


CHECKPOINT_FORMAT_VERSION = 1


def save_checkpoint(state: DenoiserState, path) -> None:
    """Self-describing checkpoint: spec, step count and weights."""
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "architecture": state.spec.architecture,
        "channels": state.spec.channels,
        "depth": state.spec.depth,
        "step_count": state.step_count,
        "state_dict": state.network.state_dict(),
    }
    torch.save(payload, path)


def load_checkpoint(path) -> DenoiserState:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    spec = DenoiserSpec(payload["architecture"], payload["channels"], payload["depth"])
    state = build_denoiser(spec, rng_seed=0)
    state.network.load_state_dict(payload["state_dict"])
    state.step_count = int(payload["step_count"])
    return state


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    rel_errors: tuple
    n_checked: int
    passed: bool


def finite_difference_gradcheck(
    state: DenoiserState,
    image: np.ndarray,
    n_params: int = 20,
    step: float = 1e-6,
    rel_tol: float = 1e-3,
    rng_seed: int = 0,
) -> GradCheckReport:
    """Check autograd parameter gradients of the L1 loss against central differences.

    The network is copied to float64 and the target is constructed so every
    residual element has magnitude >= 0.5 at the evaluation point, keeping
    the absolute-value kink far from the perturbation range. Coordinates
    are sampled among parameters with non-negligible analytic gradient so
    the relative error is well defined.
    """
    rng = np.random.default_rng(rng_seed)
    net = copy.deepcopy(state.network).double()
    net.train()

    tensor, _ = _to_batch(image)
    check_divisibility(state.spec, tensor.shape)
    x = tensor.double()

    with torch.no_grad():
        base_out = net(x)
    offset = torch.from_numpy(
        rng.choice([-1.0, 1.0], size=tuple(base_out.shape))
        * rng.uniform(0.5, 1.0, size=tuple(base_out.shape))
    )
    target = base_out - offset

    def loss_fn():
        return (net(x) - target).abs().mean()

    params = [p for p in net.parameters() if p.requires_grad]
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()

    flat_grads = torch.cat([p.grad.reshape(-1) for p in params]).numpy()
    sizes = [p.numel() for p in params]
    offsets = np.cumsum([0] + sizes)

    magnitude_floor = max(1e-8, 1e-4 * float(np.abs(flat_grads).mean()))
    eligible = np.flatnonzero(np.abs(flat_grads) > magnitude_floor)
    if eligible.size < n_params:
        raise ConfigurationError(
            f"only {eligible.size} parameters with usable gradient magnitude; "
            f"need {n_params}"
        )
    chosen = rng.choice(eligible, size=n_params, replace=False)

    rel_errors = []
    with torch.no_grad():
        for flat_idx in chosen:
            p_idx = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
            local = int(flat_idx - offsets[p_idx])
            param = params[p_idx]
            view = param.reshape(-1)
            original = view[local].item()
            h = step * max(1.0, abs(original))
            view[local] = original + h
            loss_plus = loss_fn().item()
            view[local] = original - h
            loss_minus = loss_fn().item()
            view[local] = original
            fd = (loss_plus - loss_minus) / (2.0 * h)
            an = float(flat_grads[flat_idx])
            rel_errors.append(abs(fd - an) / max(abs(fd), abs(an)))

    rel_errors = tuple(rel_errors)
    max_err = max(rel_errors)
    return GradCheckReport(
        max_rel_error=max_err,
        rel_errors=rel_errors,
        n_checked=len(rel_errors),
        passed=max_err < rel_tol,
    )
