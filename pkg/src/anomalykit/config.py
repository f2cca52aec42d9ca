"""Experiment configuration and run manifests.

One JSON file describes a whole experiment: grid, model, reaction
branches, inclusion, data family, probe corners, solver knobs, seeds,
output directory. The file round-trips losslessly, scalar keys can be
overridden from the command line with dotted paths, and a sha256 hash of
the canonical serialization is stamped into every artifact so outputs
stay traceable to the exact configuration that produced them.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from anomalykit.cascade import DataFamily
from anomalykit.forward import ModelParams
from anomalykit.geometry import (GeometryError, Grid, Inclusion,
                                 TruncatedCorner, build_grid,
                                 corner_from_edges, octant_corner,
                                 sector_corner)
from anomalykit.reactions import PiecewiseReaction, ReactionError, TaylorReaction


class ConfigError(ValueError):
    pass


DEFAULT_CONFIG: dict = {
    "grid": {"nx": 64, "ny": 64, "bounds": [0.0, 1.0, 0.0, 1.0]},
    "model": {
        "n_chemicals": 1,
        "n_prey": 1,
        "chem_diffusion": [0.05],
        "prey_diffusion": [0.04],
        "cross_diffusion": [[0.0]],
        "taxis": [[0.02]],
    },
    "reaction": {
        "u0": [0.0],
        "order": 2,
        "exterior": {"1": {"u1u1": 0.5}},
        "interior": {"1": {"u1u1": 1.0}},
    },
    "inclusion": {"kind": "circle", "center": [0.45, 0.55], "radius": 0.15},
    "family": {
        "f1": ["0.2 + 0.1*sin(3.141592653589793*x1)*sin(3.141592653589793*x2)"],
        "f2": None,
        "g1": ["0.3"],
        "g2": None,
        "epsilons": [0.1, 0.05, 0.025, 0.0125],
    },
    "run": {
        "variant": "parabolic",
        "t_final": 0.06,
        "n_steps": 30,
        "store_every": 1,
        "boundary": "neumann",
    },
    "solver": {"newton_tol": 1e-10, "max_iter": 200},
    "probe": {
        "taus": [20.0, 40.0, 80.0, 160.0],
        "alphas": [0.0],
        "corners": [
            {"kind": "sector", "apex": [0.3, 0.4], "axis_angle": 0.7,
             "half_angle": 0.2617993877991494, "h": 0.45},
        ],
    },
    "invert": {
        "candidate": "circle",
        "max_solves": 300,
        "n_restarts": 3,
        "noise": 0.0,
        "component": 1,
        "multi_index": "u1u1",
        "recover_coefficient": True,
        "n_samples": 32,
    },
    "seeds": {"noise": 11, "restarts": 11},
    "output": "runs/default",
}


def _parse_scalar(text: str) -> Any:
    """Best-effort scalar parse for --set overrides: JSON first, then raw."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


@dataclass
class ExperimentConfig:
    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_CONFIG))

    # -- persistence ---------------------------------------------------------

    @classmethod
    def default(cls) -> "ExperimentConfig":
        return cls()

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        return cls(data)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.data, fh, sort_keys=True, indent=1)
            fh.write("\n")

    def canonical_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def copy(self) -> "ExperimentConfig":
        return ExperimentConfig(copy.deepcopy(self.data))

    # -- dotted-key access ---------------------------------------------------

    def get(self, dotted: str, default=ConfigError):
        node: Any = self.data
        for part in dotted.split("."):
            if isinstance(node, list):
                try:
                    node = node[int(part)]
                    continue
                except (ValueError, IndexError):
                    pass
            elif isinstance(node, dict) and part in node:
                node = node[part]
                continue
            if default is ConfigError:
                raise ConfigError(f"missing config key {dotted!r}")
            return default
        return node

    def set_value(self, dotted: str, value: Any) -> None:
        """Override one key by dotted path; intermediate tables are created."""
        parts = dotted.split(".")
        node = self.data
        for part in parts[:-1]:
            if isinstance(node, list):
                node = node[int(part)]
            else:
                node = node.setdefault(part, {})
                if not isinstance(node, (dict, list)):
                    raise ConfigError(f"config key {dotted!r} crosses a scalar")
        leaf = parts[-1]
        if isinstance(node, list):
            node[int(leaf)] = value
        else:
            node[leaf] = value

    def apply_overrides(self, assignments) -> None:
        for text in assignments:
            if "=" not in text:
                raise ConfigError(f"override {text!r} is not of the form key=value")
            key, raw = text.split("=", 1)
            self.set_value(key.strip(), _parse_scalar(raw.strip()))

    # -- object builders -----------------------------------------------------

    def grid(self) -> Grid:
        g = self.get("grid")
        try:
            return build_grid(int(g["nx"]), int(g["ny"]), tuple(g["bounds"]))
        except (KeyError, TypeError, GeometryError) as exc:
            raise ConfigError(f"bad grid spec: {exc}") from exc

    def model(self) -> ModelParams:
        m = self.get("model")
        try:
            return ModelParams(
                n_chemicals=int(m["n_chemicals"]), n_prey=int(m["n_prey"]),
                chem_diffusion=m["chem_diffusion"],
                prey_diffusion=m["prey_diffusion"],
                cross_diffusion=m["cross_diffusion"], taxis=m["taxis"])
        except KeyError as exc:
            raise ConfigError(f"missing config key 'model.{exc.args[0]}'") from exc
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad model spec: {exc}") from exc

    def taylor(self, branch: str) -> TaylorReaction:
        r = self.get("reaction")
        table = r.get(branch)
        if table is None:
            raise ConfigError(f"missing config key 'reaction.{branch}'")
        m = self.get("model")
        reaction = TaylorReaction(int(m["n_chemicals"]), int(m["n_prey"]),
                                  u0=r.get("u0", [0.0] * int(m["n_chemicals"])),
                                  order=int(r.get("order", 2)))
        try:
            for comp, entries in table.items():
                for beta, value in entries.items():
                    reaction.set_coefficient(int(comp), beta, float(value))
        except (ReactionError, ValueError) as exc:
            raise ConfigError(
                f"bad coefficient under 'reaction.{branch}': {exc}") from exc
        return reaction

    def inclusion(self) -> Inclusion:
        spec = self.get("inclusion")
        kind = spec.get("kind")
        try:
            if kind == "circle":
                return Inclusion.circle(tuple(spec["center"]), float(spec["radius"]))
            if kind == "polygon":
                return Inclusion.polygon(np.asarray(spec["vertices"], dtype=float))
            if kind == "star":
                return Inclusion.star(tuple(spec["center"]),
                                      np.asarray(spec["fourier"], dtype=float))
        except (KeyError, TypeError, GeometryError) as exc:
            raise ConfigError(f"bad inclusion spec: {exc}") from exc
        raise ConfigError(f"unknown inclusion kind {kind!r}")

    def reaction(self, grid: Optional[Grid] = None,
                 inclusion: Optional[Inclusion] = None) -> PiecewiseReaction:
        return PiecewiseReaction(self.taylor("exterior"), self.taylor("interior"),
                                 inclusion or self.inclusion(),
                                 grid or self.grid())

    def family(self, grid: Optional[Grid] = None) -> DataFamily:
        fam = self.get("family")
        m = self.get("model")
        grid = grid or self.grid()
        eps = fam.get("epsilons")
        if eps is None or len(eps) < 4:
            raise ConfigError("'family.epsilons' needs at least four entries")
        r = self.get("reaction")
        return DataFamily.build(
            grid, r.get("u0", [0.0] * int(m["n_chemicals"])),
            [0.0] * int(m["n_prey"]),
            f1=fam.get("f1"), f2=fam.get("f2"),
            g1=fam.get("g1"), g2=fam.get("g2"), epsilons=eps)

    def corners(self) -> list[TruncatedCorner]:
        out = []
        for k, spec in enumerate(self.get("probe.corners")):
            kind = spec.get("kind", "sector")
            try:
                if kind == "sector":
                    out.append(sector_corner(tuple(spec["apex"]),
                                             float(spec["axis_angle"]),
                                             float(spec["half_angle"]),
                                             float(spec["h"])))
                elif kind == "octant":
                    out.append(octant_corner(tuple(spec["apex"]), float(spec["h"])))
                elif kind == "edges":
                    out.append(corner_from_edges(tuple(spec["apex"]),
                                                 np.asarray(spec["edges"], dtype=float),
                                                 float(spec["h"])))
                else:
                    raise ConfigError(f"unknown corner kind {kind!r}")
            except (KeyError, TypeError, GeometryError) as exc:
                raise ConfigError(f"bad corner spec at index {k}: {exc}") from exc
        return out


@dataclass
class RunManifest:
    """Provenance record written after all other artifacts of a run."""

    config_hash: str
    command: str
    artifacts: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    started: str = ""
    finished: str = ""

    def add_artifact(self, path) -> None:
        self.artifacts.append(str(path))

    def to_dict(self) -> dict:
        return {
            "format": "anomalykit-manifest-1",
            "config_hash": self.config_hash,
            "command": self.command,
            "artifacts": list(self.artifacts),
            "timings": {k: float(v) for k, v in self.timings.items()},
            "checks": {k: bool(v) for k, v in self.checks.items()},
            "warnings": list(self.warnings),
            "started": self.started,
            "finished": self.finished,
        }

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")
