"""INI run configuration with a fixed schema per section.

Potentials are written ``kind; coefficients; period``, for example
``fourier-list; 1,1=1.0 0,1=0.5; 2,2`` or ``cosine; 0.5; 1,1`` or ``none``.
Fields are written as harmonics ``n1,n2=amplitude@phase`` separated by
spaces, next to a ``field_mean`` key. All algorithms are deterministic, so
there is no seed.
"""
from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction

from .flux import FieldProfile, RationalFlux
from .hamiltonians import NO_POTENTIAL, PotentialSpec


class ConfigError(ValueError):
    pass


def parse_flux(s: str) -> RationalFlux:
    try:
        return RationalFlux.of(Fraction(s.strip()))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"bad flux {s!r}") from exc


def parse_fluxes(s: str) -> tuple:
    fl = tuple(parse_flux(v) for v in s.replace(",", " ").split())
    if list(fl) != sorted(fl, key=lambda f: f.phi):
        raise ConfigError(f"fluxes must be ascending: {s!r}")
    return fl


def parse_potential(s: str) -> PotentialSpec:
    parts = [p.strip() for p in s.split(";")]
    kind = parts[0]
    if kind == "none":
        return NO_POTENTIAL
    if len(parts) != 3:
        raise ConfigError(f"potential {s!r} needs 'kind; coefficients; period'")
    period = tuple(int(v) for v in parts[2].split(","))
    try:
        if kind == "cosine":
            return PotentialSpec("cosine", (float(parts[1]),), period)
        modes = []
        for tok in parts[1].split():
            n, a = tok.split("=")
            n1, n2 = (int(v) for v in n.split(","))
            modes.append(((n1, n2), float(a)))
        return PotentialSpec(kind, tuple(modes), period)
    except ValueError as exc:
        raise ConfigError(f"bad potential {s!r}: {exc}") from exc


def parse_harmonics(s: str) -> tuple:
    out = []
    for tok in s.split():
        try:
            n, rest = tok.split("=")
            a, ph = (rest.split("@") + ["0"])[:2]
            n1, n2 = (int(v) for v in n.split(","))
            out.append(((n1, n2), float(a), _angle(ph)))
        except ValueError as exc:
            raise ConfigError(f"bad harmonic {tok!r}") from exc
    return tuple(out)


def _angle(s: str) -> float:
    """Radians from ``0.3``, ``pi``, ``-pi/2`` or ``0.5*pi``."""
    s = s.strip().replace(" ", "")
    m = re.fullmatch(r"([+-]?(?:\d+(?:\.\d*)?|\.\d+)?)\*?pi(?:/(\d+))?", s)
    if m is None:
        return float(s)
    c = {"": 1.0, "+": 1.0, "-": -1.0}.get(m[1])
    c = float(m[1]) if c is None else c
    return c * math.pi / int(m[2] or 1)


def _floats(s):
    return tuple(float(v) for v in s.replace(",", " ").split())


def _ints(s):
    return tuple(int(v) for v in s.replace(",", " ").split())


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# section -> key -> (parser, default)
SCHEMA = {
    "run": {
        "backend": (str, "lattice"),
        "qmax": (int, 10),
        "kgrid": (int, 32),
        "delta_gap": (float, 1e-3),
        "continuum_N": (int, 24),
        "continuum_kgrid": (int, 8),
        "potential": (parse_potential, NO_POTENTIAL),
    },
    "butterfly": {
        "qmax": (int, None),
        "kgrid": (int, None),
    },
    "streda": {
        "fluxes": (parse_fluxes, (RationalFlux(1, 5), RationalFlux(1, 4), RationalFlux(1, 3))),
        "island": (int, 0),
        "potential": (parse_potential, None),
    },
    "normgap": {
        "flux": (parse_flux, RationalFlux(1, 3)),
        "island": (int, 0),
        "R": (int, 16),
        "m_list": (_ints, (16, 32, 64)),
        "scan": (int, 8),
        "wannier": (_bool, False),
        "potential": (parse_potential, None),
    },
    "adiabatic": {
        "flux": (parse_flux, RationalFlux(1, 3)),
        "island": (int, 0),
        "L": (int, 60),
        "L_inner": (int, 30),
        "lambdas": (_floats, (0.02, 0.05, 0.1)),
        "field_mean": (float, 1.0),
        "field_harmonics": (parse_harmonics, ()),
        "slope_rtol": (float, 0.1),
        "slope_atol": (float, 1e-3),
    },
    "wannier": {
        "flux": (parse_flux, RationalFlux(1, 2)),
        "island": (int, 0),
        "kgrid": (int, 24),
        "radius": (int, 8),
        "potential": (parse_potential, PotentialSpec("fourier-list", (((1, 1), 1.0),), (2, 2))),
    },
    "purify": {
        "flux": (parse_flux, RationalFlux(1, 3)),
        "island": (int, 0),
        "R": (int, 20),
        "eps": (_floats, (0.02, 0.01, 0.005)),
        "kn_amplitudes": (_floats, (0.5, 1.0)),
        "kn_period": (_ints, (1, 3)),
        "kn_side": (int, 48),
        "L_list": (_ints, (8, 16, 32)),
    },
}


@dataclass
class RunConfig:
    """Validated configuration; ``sections[name][key]`` holds parsed values."""

    sections: dict
    source: str | None = None
    raw: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.sections[name]

    @property
    def backend(self) -> str:
        return self.sections["run"]["backend"]

    @property
    def kgrid(self) -> int:
        """k-grid side for the active backend."""
        r = self.sections["run"]
        return r["continuum_kgrid"] if self.backend == "continuum" else r["kgrid"]

    def potential(self, name: str) -> PotentialSpec:
        v = self.sections[name].get("potential")
        return self.sections["run"]["potential"] if v is None else v

    def field(self) -> FieldProfile:
        a = self.sections["adiabatic"]
        return FieldProfile(a["field_mean"], a["field_harmonics"])

    def to_dict(self) -> dict:
        """Plain description of the effective configuration (for reports)."""
        out = {}
        for sec, keys in self.sections.items():
            out[sec] = {k: _plain(v) for k, v in keys.items()}
        return out


def _plain(v):
    if isinstance(v, RationalFlux):
        return str(v)
    if isinstance(v, PotentialSpec):
        return {"kind": v.kind, "modes": [[list(n), a] for n, a in v.modes], "period": list(v.period)}
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def load_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Read an INI file (or defaults only) and validate it against SCHEMA."""
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    if path is not None:
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
    raw = {s: dict(cp[s]) for s in cp.sections()}
    for sec, vals in (overrides or {}).items():
        raw.setdefault(sec, {}).update({k: str(v) for k, v in vals.items() if v is not None})
    sections = {}
    for sec in raw:
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
    for sec, keys in SCHEMA.items():
        given = raw.get(sec, {})
        unknown = sorted(set(given) - set(keys))
        if unknown:
            raise ConfigError(f"unknown key(s) in [{sec}]: {', '.join(unknown)}")
        parsed = {}
        for k, (parse, default) in keys.items():
            if k in given:
                try:
                    parsed[k] = parse(given[k])
                except ConfigError:
                    raise
                except (ValueError, TypeError) as exc:
                    raise ConfigError(f"[{sec}] {k} = {given[k]!r}: {exc}") from exc
            else:
                parsed[k] = default
        sections[sec] = parsed
    if sections["run"]["backend"] not in ("lattice", "continuum"):
        raise ConfigError(f"backend must be lattice or continuum, got {sections['run']['backend']!r}")
    if min(sections["run"]["kgrid"], sections["run"]["continuum_kgrid"]) < 8:
        raise ConfigError("kgrid must be >= 8")
    if len(sections["streda"]["fluxes"]) < 3:
        raise ConfigError("[streda] fluxes needs at least three values")
    if sections["run"]["qmax"] < 1:
        raise ConfigError("qmax must be >= 1")
    return RunConfig(sections, path, raw)
