from dataclasses import dataclass

import numpy as np
from django.utils.translation import gettext_lazy as _

from Master.validators import ContractViolation

# Seven functional domains over 53 networks. The published per-domain counts
# add up to 54, so SM and CB are one smaller and CC one larger here.
DEFAULT_DOMAINS = (
    ('SC', 5), ('AUD', 2), ('SM', 9), ('VS', 9), ('CC', 17), ('DM', 7), ('CB', 4),
)

# Desk-scale layout used by the synthetic preset: 16 networks in 4 domains.
DESK_DOMAINS = (('SC', 4), ('SM', 4), ('VS', 4), ('CC', 4))


@dataclass(frozen=True)
class DomainPartition:
    names: tuple
    sizes: tuple

    def __post_init__(self):
        if len(self.names) != len(self.sizes) or not self.names:
            raise ContractViolation(_("A partition needs one size per domain name."), code='bad_partition')
        if len(set(self.names)) != len(self.names):
            raise ContractViolation(_("Domain names must be unique."), code='bad_partition')
        if any(int(size) < 1 for size in self.sizes):
            raise ContractViolation(_("Every domain needs at least one network."), code='bad_partition')

    @classmethod
    def from_pairs(cls, pairs):
        pairs = [tuple(p) for p in pairs]
        return cls(tuple(str(n) for n, _s in pairs), tuple(int(s) for _n, s in pairs))

    @classmethod
    def default(cls):
        return cls.from_pairs(DEFAULT_DOMAINS)

    @classmethod
    def desk(cls):
        return cls.from_pairs(DESK_DOMAINS)

    @property
    def n_networks(self):
        return int(sum(self.sizes))

    @property
    def n_domains(self):
        return len(self.names)

    @property
    def ranges(self):
        """Contiguous half-open index ranges, in domain order."""
        bounds = np.cumsum((0,) + tuple(self.sizes))
        return [range(int(bounds[i]), int(bounds[i + 1])) for i in range(self.n_domains)]

    def slice_of(self, name):
        try:
            r = self.ranges[self.names.index(name)]
        except ValueError:
            raise ContractViolation(
                _("Unknown domain %(name)s."), code='unknown_domain', params={'name': name},
            ) from None
        return slice(r.start, r.stop)

    def labels(self):
        """Domain name for every network index."""
        return [name for name, size in zip(self.names, self.sizes) for _i in range(size)]

    def check_covers(self, n):
        if self.n_networks != n:
            raise ContractViolation(
                _("Partition covers %(covered)s networks but the data has %(n)s."),
                code='partition_mismatch', params={'covered': self.n_networks, 'n': n},
            )

    def to_pairs(self):
        return [[name, int(size)] for name, size in zip(self.names, self.sizes)]
