"""Named parameter sets for the Kyber and Saber variants."""
from __future__ import annotations

from dataclasses import dataclass
from math import ceil, log2

from .errors import ConfigError


@dataclass(frozen=True)
class SchemeParams:
    name: str
    n: int
    l: int
    q: int
    p: int
    t: int
    eta1: int
    eta2: int
    k: int
    fail_prob_log2: int

    @property
    def is_kyber(self) -> bool:
        return self.name.startswith("Kyber")

    @property
    def is_saber(self) -> bool:
        return not self.is_kyber

    @property
    def a2b_width(self) -> int:
        """Register width of the decode A2B: k+1 for Kyber, k for Saber."""
        return self.k + 1 if self.is_kyber else self.k

    @property
    def unknowns(self) -> int:
        """Number of unknown coefficients in (e, s)."""
        return 2 * self.l * self.n


def _kyber(name, l, p, t, eta1, fail):
    q = 3329
    return SchemeParams(name, 256, l, q, p, t, eta1, 2, ceil(log2(q)), fail)


def _saber(name, l, t, eta, fail):
    # decode path only: q = p = 2^eps_p, k = eps_p
    eps_p = 10
    return SchemeParams(name, 256, l, 2**eps_p, 2**eps_p, t, eta, eta, eps_p, fail)


SCHEMES: dict[str, SchemeParams] = {
    s.name: s
    for s in (
        _kyber("Kyber512", 2, 2**10, 2**4, 3, -139),
        _kyber("Kyber768", 3, 2**10, 2**4, 2, -164),
        _kyber("Kyber1024", 4, 2**11, 2**5, 2, -174),
        _saber("SaberLight", 2, 2**3, 5, -120),
        _saber("Saber", 3, 2**4, 4, -136),
        _saber("SaberFire", 4, 2**6, 3, -165),
    )
}

_ALIASES = {"lightsaber": "SaberLight", "firesaber": "SaberFire"}


def get_params(name: str) -> SchemeParams:
    key = {k.lower(): k for k in SCHEMES}.get(name.lower()) or _ALIASES.get(name.lower())
    if key is None:
        raise ConfigError(f"unknown scheme {name!r}; expected one of {sorted(SCHEMES)}")
    return SCHEMES[key]


KYBER512 = SCHEMES["Kyber512"]
SABER = SCHEMES["Saber"]
