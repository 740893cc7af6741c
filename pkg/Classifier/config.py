from dataclasses import asdict, dataclass, fields

from django.utils.translation import gettext_lazy as _

from Master.validators import ContractViolation, require
from Numeric.ops import NORMALIZERS


@dataclass(frozen=True)
class ModelConfig:
    """Architecture of the spatio-temporal attention classifier."""

    n_networks: int
    n_windows: int
    conv_channels: tuple = (8, 8)
    kernel_size: int = 3
    embed_dim: int = 32
    n_blocks: int = 2
    n_heads: int = 1
    n_classes: int = 2
    dropout: float = 0.1
    attention: str = 'sparsemax'
    threshold: float = 0.5
    seed: int = 0
    ffn_multiplier: int = 2

    def __post_init__(self):
        object.__setattr__(self, 'conv_channels', tuple(int(c) for c in self.conv_channels))
        for name in ('n_networks', 'n_windows', 'embed_dim', 'n_blocks', 'n_heads', 'ffn_multiplier'):
            value = getattr(self, name)
            require(int(value) >= 1, _("%(name)s must be positive, got %(value)s."),
                    code='bad_config', name=name, value=value)
        require(len(self.conv_channels) >= 1 and min(self.conv_channels) >= 1,
                _("The conv stem needs at least one layer with positive channels."), code='bad_config')
        require(self.kernel_size % 2 == 1 and self.kernel_size >= 1,
                _("Kernel size must be odd."), code='bad_config')
        require(self.n_classes >= 2, _("At least two classes are required."), code='bad_config')
        require(self.embed_dim % self.n_heads == 0,
                _("Embedding dim %(d)s is not divisible by %(h)s heads."),
                code='bad_config', d=self.embed_dim, h=self.n_heads)
        require(0.0 <= self.dropout < 1.0, _("Dropout must lie in [0, 1)."), code='bad_config')
        require(0.0 < self.threshold < 1.0, _("Decision threshold must lie in (0, 1)."), code='bad_config')
        if self.attention not in NORMALIZERS:
            raise ContractViolation(
                _("Unknown attention normaliser %(name)s."), code='bad_config',
                params={'name': self.attention},
            )

    @property
    def head_dim(self):
        return self.embed_dim // self.n_heads

    @property
    def stem_channels(self):
        return self.conv_channels[-1]

    @property
    def n_outputs(self):
        """One logit for binary tasks, one per class otherwise."""
        return 1 if self.n_classes == 2 else self.n_classes

    @property
    def is_binary(self):
        return self.n_classes == 2

    def to_dict(self):
        data = asdict(self)
        data['conv_channels'] = list(self.conv_channels)
        return data

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ContractViolation(
                _("Unknown model settings: %(keys)s."), code='bad_config',
                params={'keys': ', '.join(sorted(unknown))},
            )
        return cls(**data)
