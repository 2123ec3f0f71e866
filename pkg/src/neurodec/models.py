"""Deep brain modules for M/EEG and fMRI.

Both modules map a (batch, channels, time) tensor plus subject indices to two
embedding predictions: one for the reconstruction (MSE) loss and one for the
contrastive (CLIP) loss. Differentiation is delegated to torch autograd.

Full-size configurations can be instantiated on the ``meta`` device, which
allocates no storage, so parameter tables are cheap to produce.
"""

from __future__ import annotations

import math
import warnings
from collections import OrderedDict
from dataclasses import asdict, dataclass, replace

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ContractViolation

BN_MOMENTUM = 0.1
NORM_EPS = 1e-5
SUBJECT_INIT_NOISE = 0.01


@dataclass(frozen=True)
class MeegModuleConfig:
    in_channels: int
    timepoints: int
    hidden: int
    n_blocks: int
    backbone_out: int
    embed_dim: int = 1536
    n_subjects: int = 1
    sa_out: int = 270
    sa_harmonics: int = 32

    def to_dict(self):
        return {"kind": "meeg", **asdict(self)}


@dataclass(frozen=True)
class FmriModuleConfig:
    hidden: int
    n_blocks: int
    clip_head: bool
    in_vertices: int = 20484
    n_trs: int = 5
    embed_dim: int = 1536
    n_subjects: int = 1
    dropout: float = 0.5

    def to_dict(self):
        return {"kind": "fmri", **asdict(self)}


# Architectures as printed in the per-device architecture tables.
ARCHITECTURES = {
    ("eeg", "medium"): MeegModuleConfig(64, 144, hidden=181, n_blocks=4, backbone_out=564, n_subjects=1),
    ("eeg", "large"): MeegModuleConfig(64, 144, hidden=442, n_blocks=5, backbone_out=1526, n_subjects=10),
    ("meg", "medium"): MeegModuleConfig(272, 180, hidden=50, n_blocks=2, backbone_out=152, n_subjects=1),
    ("meg", "large"): MeegModuleConfig(272, 180, hidden=396, n_blocks=4, backbone_out=1411, n_subjects=4),
    ("fmri", "medium"): FmriModuleConfig(hidden=553, n_blocks=2, clip_head=False, n_subjects=3),
    ("fmri", "large"): FmriModuleConfig(hidden=1552, n_blocks=0, clip_head=True, n_subjects=4),
}

# The hyperparameter tables carry the EEG/MEG labels the other way round:
# their "EEG" settings are the ones the MEG architecture table is built from.
HYPERPARAMETER_TABLES = {
    "eeg": {"medium": dict(n_blocks=2, hidden=50, backbone_out=152, batch_size=32, lr=3e-4),
            "large": dict(n_blocks=4, hidden=396, backbone_out=1411, batch_size=256, lr=3e-4)},
    "meg": {"medium": dict(n_blocks=4, hidden=181, backbone_out=564, batch_size=64, lr=3e-4),
            "large": dict(n_blocks=5, hidden=442, backbone_out=1526, batch_size=512, lr=3e-4)},
    "fmri": {"medium": dict(hidden=553, n_blocks=2, clip_head=False, batch_size=256, lr=3e-4),
             "large": dict(hidden=1552, n_blocks=0, clip_head=True, batch_size=64, lr=3e-3)},
}


def architecture(device: str, size: str, labeling: str = "architecture"):
    """Published configuration for ``device`` in {eeg, meg, fmri} and ``size`` in {medium, large}.

    ``labeling="hyperparameters"`` takes hidden size, block count and backbone
    width from the hyperparameter table of that device instead, keeping the
    device's input shape and subject count.
    """
    device = "fmri" if device.startswith("fmri") else device
    base = ARCHITECTURES[(device, size)]
    if labeling == "architecture" or device == "fmri":
        return base
    if labeling != "hyperparameters":
        raise ContractViolation(f"unknown labeling {labeling!r}")
    hp = HYPERPARAMETER_TABLES[device][size]
    return replace(base, hidden=hp["hidden"], n_blocks=hp["n_blocks"], backbone_out=hp["backbone_out"])


MEEG_LAYERS = OrderedDict(
    spatial_attention="Spatial attention",
    linear_projection="Linear projection",
    subject_layer="Subject layer",
    blocks="Residual dilated conv blocks",
    conv1x1="1x1 conv block",
    temporal_aggregation="Temporal aggregation",
    mse_head="MSE projection head",
    clip_head="CLIP projection head",
)
FMRI_LAYERS = OrderedDict(
    subject_layer="Subject layer",
    tr_layer="TR layer",
    blocks="Residual conv blocks",
    temporal_aggregation="Temporal aggregation",
    linear_projection="Linear projection",
    mse_head="MSE projection head",
    clip_head="CLIP projection head",
)


def closed_form_counts(config) -> OrderedDict:
    """Per-layer parameter counts by arithmetic, independent of any module."""
    if isinstance(config, MeegModuleConfig):
        c, d, out, f = config, config.hidden, config.backbone_out, config.embed_dim
        return OrderedDict(
            spatial_attention=c.sa_out * c.sa_harmonics**2 * 2,
            linear_projection=c.sa_out * d + d,
            subject_layer=d * d * c.n_subjects,
            blocks=c.n_blocks * (12 * d * d + 8 * d),
            conv1x1=(2 * d * d + 2 * d) + (2 * d * out + out),
            temporal_aggregation=c.timepoints + 1,
            mse_head=out * f + f,
            clip_head=out * f + f,
        )
    c, h, f = config, config.hidden, config.embed_dim
    return OrderedDict(
        subject_layer=c.in_vertices * h * c.n_subjects,
        tr_layer=c.n_trs * (h * h + h) + 2 * h,
        blocks=c.n_blocks * (h * h + 3 * h),
        temporal_aggregation=c.n_trs + 1,
        linear_projection=h * f + f,
        mse_head=f * f + f,
        clip_head=(f * f + 3 * f) if c.clip_head else 0,
    )


def _check_input(x, subject_ids, channels, times, n_subjects, channel_name="channel"):
    if x.ndim != 3:
        raise ContractViolation(f"input must be (batch, {channel_name}, time); got {tuple(x.shape)}")
    if x.shape[1] != channels:
        raise ContractViolation(f"{channel_name} axis has size {x.shape[1]}, expected {channels}")
    if x.shape[2] != times:
        raise ContractViolation(f"time axis has size {x.shape[2]}, expected {times}")
    if subject_ids.shape != (x.shape[0],):
        raise ContractViolation("one subject id per batch row required")
    if x.device.type != "meta" and len(subject_ids) and (
        int(subject_ids.max()) >= n_subjects or int(subject_ids.min()) < 0
    ):
        raise ContractViolation(f"subject ids must lie in [0, {n_subjects})")


class SpatialAttention(nn.Module):
    """Sensor mixing whose weights are a softmax over a 2D Fourier function of sensor position."""

    def __init__(self, n_out: int, n_harmonics: int, positions: torch.Tensor):
        super().__init__()
        self.cos = nn.Parameter(torch.empty(n_out, n_harmonics, n_harmonics))
        self.sin = nn.Parameter(torch.empty(n_out, n_harmonics, n_harmonics))
        self.register_buffer("positions", positions)
        self.n_harmonics = n_harmonics

    def weights(self) -> torch.Tensor:
        """Mixing matrix (n_out, n_sensors); rows sum to one."""
        k = torch.arange(self.n_harmonics, dtype=self.cos.dtype, device=self.cos.device)
        px, py = self.positions[:, 0], self.positions[:, 1]
        phase = 2 * math.pi * (k[:, None, None] * px + k[None, :, None] * py)
        logits = torch.einsum("jkl,kls->js", self.cos, torch.cos(phase))
        logits = logits + torch.einsum("jkl,kls->js", self.sin, torch.sin(phase))
        return torch.softmax(logits, dim=-1)

    def forward(self, x):
        return torch.einsum("js,bst->bjt", self.weights(), x)


class SubjectLinear(nn.Module):
    """One bias-free (out, in) matrix per subject, selected by subject index."""

    def __init__(self, n_subjects: int, n_in: int, n_out: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(n_subjects, n_out, n_in))

    def forward(self, x, subject_ids):
        return torch.einsum("boi,bit->bot", self.weight[subject_ids], x)


class DilatedConvBlock(nn.Module):
    """Two residual dilated convs (BN + GELU), then a gated conv (GLU)."""

    def __init__(self, hidden: int, index: int):
        super().__init__()
        d1 = 2 ** ((2 * index) % 5)
        d2 = 2 ** ((2 * index + 1) % 5)
        self.conv1 = nn.Conv1d(hidden, hidden, 3, dilation=d1, padding=d1)
        self.bn1 = nn.BatchNorm1d(hidden, eps=NORM_EPS, momentum=BN_MOMENTUM)
        self.conv2 = nn.Conv1d(hidden, hidden, 3, dilation=d2, padding=d2)
        self.bn2 = nn.BatchNorm1d(hidden, eps=NORM_EPS, momentum=BN_MOMENTUM)
        self.conv3 = nn.Conv1d(hidden, 2 * hidden, 3, padding=1)
        self.dilations = (d1, d2)

    def forward(self, x):
        x = x + F.gelu(self.bn1(self.conv1(x)))
        x = x + F.gelu(self.bn2(self.conv2(x)))
        return F.glu(self.conv3(x), dim=1)


class MeegModule(nn.Module):
    def __init__(self, config: MeegModuleConfig, positions: torch.Tensor):
        super().__init__()
        c = config
        self.config = c
        self.spatial_attention = SpatialAttention(c.sa_out, c.sa_harmonics, positions)
        self.linear_projection = nn.Conv1d(c.sa_out, c.hidden, 1)
        self.subject_layer = SubjectLinear(c.n_subjects, c.hidden, c.hidden)
        self.blocks = nn.ModuleList(DilatedConvBlock(c.hidden, k) for k in range(c.n_blocks))
        self.conv1x1 = nn.Sequential(
            nn.Conv1d(c.hidden, 2 * c.hidden, 1), nn.GELU(), nn.Conv1d(2 * c.hidden, c.backbone_out, 1)
        )
        self.temporal_aggregation = nn.Linear(c.timepoints, 1)
        self.mse_head = nn.Linear(c.backbone_out, c.embed_dim)
        self.clip_head = nn.Linear(c.backbone_out, c.embed_dim)

    def forward(self, x, subject_ids):
        c = self.config
        _check_input(x, subject_ids, c.in_channels, c.timepoints, c.n_subjects)
        h = self.spatial_attention(x)
        h = self.linear_projection(h)
        h = self.subject_layer(h, subject_ids)
        for block in self.blocks:
            h = block(h)
        h = self.conv1x1(h)
        h = self.temporal_aggregation(h).squeeze(-1)
        return self.mse_head(h), self.clip_head(h)


class TRLayer(nn.Module):
    """Separate affine map per TR, then a shared LayerNorm."""

    def __init__(self, n_trs: int, hidden: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(n_trs, hidden, hidden))
        self.bias = nn.Parameter(torch.empty(n_trs, hidden))
        self.norm = nn.LayerNorm(hidden, eps=NORM_EPS)

    def forward(self, x):
        # x: (batch, time, hidden)
        return self.norm(torch.einsum("tok,btk->bto", self.weight, x) + self.bias)


class ResidualMLPBlock(nn.Module):
    def __init__(self, hidden: int, dropout: float):
        super().__init__()
        self.norm = nn.LayerNorm(hidden, eps=NORM_EPS)
        self.linear = nn.Linear(hidden, hidden)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        return x + self.dropout(F.gelu(self.linear(self.norm(x))))


class FmriModule(nn.Module):
    def __init__(self, config: FmriModuleConfig):
        super().__init__()
        c = config
        self.config = c
        self.subject_layer = SubjectLinear(c.n_subjects, c.in_vertices, c.hidden)
        self.tr_layer = TRLayer(c.n_trs, c.hidden)
        self.dropout = nn.Dropout(c.dropout)
        self.blocks = nn.ModuleList(ResidualMLPBlock(c.hidden, c.dropout) for _ in range(c.n_blocks))
        self.temporal_aggregation = nn.Linear(c.n_trs, 1)
        self.linear_projection = nn.Linear(c.hidden, c.embed_dim)
        self.mse_head = nn.Linear(c.embed_dim, c.embed_dim)
        self.clip_head = (
            nn.Sequential(nn.Linear(c.embed_dim, c.embed_dim), nn.LayerNorm(c.embed_dim, eps=NORM_EPS), nn.GELU())
            if c.clip_head
            else None
        )

    def forward(self, x, subject_ids):
        c = self.config
        _check_input(x, subject_ids, c.in_vertices, c.n_trs, c.n_subjects, channel_name="vertex")
        h = self.subject_layer(x, subject_ids).transpose(1, 2)  # (batch, time, hidden)
        h = self.dropout(F.gelu(self.tr_layer(h)))
        for block in self.blocks:
            h = block(h)
        h = self.temporal_aggregation(h.transpose(1, 2)).squeeze(-1)
        z = self.linear_projection(h)
        mse = self.mse_head(z)
        # without a CLIP head both losses read the MSE head
        clip = self.clip_head(z) if self.clip_head is not None else mse
        return mse, clip


def _init_weights(model: nn.Module, generator: torch.Generator) -> None:
    """Kaiming-uniform fan-in weights, zero biases, near-identity square subject maps."""
    with torch.no_grad():
        for name, p in model.named_parameters():
            if p.device.type == "meta":
                continue
            leaf = name.rsplit(".", 1)[-1]
            owner = model.get_submodule(name.rsplit(".", 1)[0]) if "." in name else model
            if isinstance(owner, (nn.LayerNorm, nn.BatchNorm1d)):
                p.fill_(1.0 if leaf == "weight" else 0.0)
            elif leaf == "bias":
                p.zero_()
            elif isinstance(owner, SubjectLinear) and p.shape[1] == p.shape[2]:
                eye = torch.eye(p.shape[1], dtype=p.dtype)
                p.copy_(eye + SUBJECT_INIT_NOISE * torch.randn(p.shape, generator=generator, dtype=p.dtype))
            elif isinstance(owner, SpatialAttention):
                bound = 1.0 / owner.n_harmonics
                p.copy_(torch.empty(p.shape, dtype=p.dtype).uniform_(-bound, bound, generator=generator))
            else:
                fan_in = p[0].numel() if not isinstance(owner, (SubjectLinear, TRLayer)) else p.shape[-1]
                bound = math.sqrt(6.0 / ((1 + 5.0) * fan_in))  # kaiming_uniform with a=sqrt(5)
                p.copy_(torch.empty(p.shape, dtype=p.dtype).uniform_(-bound, bound, generator=generator))


def _warn_search_range(name, value, lo, hi):
    if not lo <= value <= hi:
        warnings.warn(f"{name}={value} outside searched range [{lo}, {hi}]", stacklevel=3)


def build_meeg(
    config: MeegModuleConfig,
    sensor_positions=None,
    seed: int = 0,
    dtype: torch.dtype = torch.float32,
    device: str = "cpu",
) -> MeegModule:
    """Instantiate an M/EEG module; ``device="meta"`` skips storage and positions."""
    if sensor_positions is None:
        if device != "meta":
            raise ContractViolation("M/EEG module needs sensor positions (channels x 2 in [0, 1]^2)")
        sensor_positions = torch.zeros(config.in_channels, 2)
    pos = torch.as_tensor(np.asarray(sensor_positions) if not torch.is_tensor(sensor_positions) else sensor_positions)
    if pos.shape != (config.in_channels, 2):
        raise ContractViolation(f"sensor positions must be ({config.in_channels}, 2); got {tuple(pos.shape)}")
    _warn_search_range("hidden", config.hidden, 32, 512)
    _warn_search_range("n_blocks", config.n_blocks, 0, 5)
    _warn_search_range("backbone_out", config.backbone_out, 64, 2048)
    with torch.device(device):
        model = MeegModule(config, pos.to(device=device, dtype=dtype)).to(dtype)
    _init_weights(model, torch.Generator().manual_seed(seed))
    return model


def build_fmri(
    config: FmriModuleConfig,
    seed: int = 0,
    dtype: torch.dtype = torch.float32,
    device: str = "cpu",
) -> FmriModule:
    with torch.device(device):
        model = FmriModule(config).to(dtype)
    _init_weights(model, torch.Generator().manual_seed(seed))
    return model


def build_model(config, sensor_positions=None, seed: int = 0, dtype=torch.float32, device: str = "cpu"):
    if isinstance(config, MeegModuleConfig):
        return build_meeg(config, sensor_positions, seed=seed, dtype=dtype, device=device)
    return build_fmri(config, seed=seed, dtype=dtype, device=device)


def config_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind", "meeg")
    return MeegModuleConfig(**d) if kind == "meeg" else FmriModuleConfig(**d)


def param_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def layer_counts(model: nn.Module) -> OrderedDict:
    """Parameter count per top-level layer, in table order."""
    layers = MEEG_LAYERS if isinstance(model, MeegModule) else FMRI_LAYERS
    out = OrderedDict()
    for name in layers:
        sub = getattr(model, name)
        out[name] = 0 if sub is None else sum(p.numel() for p in sub.parameters())
    return out


def segments(model: nn.Module) -> list[tuple[str, tuple[int, ...], int]]:
    """(name, shape, offset) of every parameter in the flat layout."""
    out, offset = [], 0
    for name, p in model.named_parameters():
        out.append((name, tuple(p.shape), offset))
        offset += p.numel()
    return out


def forward(model: nn.Module, params: dict | None, x, subject_ids):
    """Evaluate ``model`` with an optional replacement parameter dict."""
    x = torch.as_tensor(x)
    subject_ids = torch.as_tensor(subject_ids, dtype=torch.long)
    if params is None:
        return model(x, subject_ids)
    return torch.func.functional_call(model, params, (x, subject_ids))
