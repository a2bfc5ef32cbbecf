"""Experiment configuration: JSON schema, validation, and the shipped default.

A config file is a single JSON object; see README for the schema.  All
component invariants are enforced at load time and violations raise
SimulationConfigError with the offending field in the message.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import SimulationConfigError
from .noise import LevyMeasureSpec
from .systems import (
    DiffusionFamily,
    JumpFamily,
    Model,
    RegimeSchedule,
    SystemSpec,
    default_step_limit,
)


@dataclass(frozen=True)
class ExperimentConfig:
    system: SystemSpec
    diffusion: DiffusionFamily
    jump: JumpFamily
    levy: LevyMeasureSpec
    horizon: float
    regime: RegimeSchedule
    paths_per_point: int
    master_seed: int
    internal_step: float | None  # None means the auto policy
    output_dir: str

    def model(self) -> Model:
        return Model(
            system=self.system,
            diffusion=self.diffusion,
            jump=self.jump,
            levy=self.levy,
            horizon=self.horizon,
        )

    def step_limit_for(self, delta: float) -> float:
        if self.internal_step is not None:
            return self.internal_step
        return default_step_limit(delta, self.horizon)

    def to_dict(self) -> dict:
        levy: dict
        if self.levy.kind == "atomic":
            levy = {
                "kind": "atomic",
                "atoms": [
                    {"location": loc.tolist(), "mass": float(mass)}
                    for loc, mass in zip(
                        self.levy.atom_locations, self.levy.atom_masses
                    )
                ],
            }
        else:
            levy = {
                "kind": "annulus-uniform",
                "total_mass": self.levy.total_mass,
                "r0": self.levy.inner_radius,
                "r1": self.levy.outer_radius,
            }
        regime: dict = {
            "regime": self.regime.regime,
            "epsilons": list(self.regime.epsilons),
        }
        if self.regime.regime == "R2":
            regime["c"] = self.regime.c
            regime["delta_coeff"] = self.regime.delta_coeff
        else:
            regime["p"] = self.regime.p
        return {
            "system": {
                "A": self.system.A.tolist(),
                "B": self.system.B.tolist(),
                "K": self.system.K.tolist(),
                "y0": self.system.y0.tolist(),
            },
            "diffusion": {
                "kind": self.diffusion.kind,
                "base": self.diffusion.base.tolist(),
                "state_slopes": self.diffusion.slopes.tolist(),
            },
            "jump": {
                "kind": self.jump.kind,
                "base": self.jump.base.tolist(),
                "state_slopes": self.jump.slopes.tolist(),
            },
            "levy": levy,
            "horizon": self.horizon,
            "regime": regime,
            "paths_per_point": self.paths_per_point,
            "master_seed": self.master_seed,
            "internal_step": "auto" if self.internal_step is None else self.internal_step,
            "output_dir": self.output_dir,
        }

    def checksum(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _require(raw: dict, key: str, context: str):
    if key not in raw:
        raise SimulationConfigError(f"missing required field '{context}{key}'")
    return raw[key]


def _build_levy(raw: dict) -> LevyMeasureSpec:
    kind = _require(raw, "kind", "levy.")
    if kind == "atomic":
        atoms = _require(raw, "atoms", "levy.")
        locations, masses = [], []
        for i, atom in enumerate(atoms):
            locations.append(_require(atom, "location", f"levy.atoms[{i}]."))
            masses.append(_require(atom, "mass", f"levy.atoms[{i}]."))
        if not atoms:
            return LevyMeasureSpec.atomic(np.empty((0, 0)), [])
        return LevyMeasureSpec.atomic(locations, masses)
    if kind == "annulus-uniform":
        return LevyMeasureSpec.annulus_uniform(
            total_mass=float(_require(raw, "total_mass", "levy.")),
            r0=float(_require(raw, "r0", "levy.")),
            r1=float(_require(raw, "r1", "levy.")),
            dim=int(_require(raw, "dim", "levy.")),
        )
    raise SimulationConfigError(
        f"levy.kind: unknown measure kind {kind!r} "
        "(finite-activity kinds are 'atomic' and 'annulus-uniform')"
    )


def _build_diffusion(raw: dict) -> DiffusionFamily:
    kind = _require(raw, "kind", "diffusion.")
    base = _require(raw, "base", "diffusion.")
    if kind == "constant":
        return DiffusionFamily.constant(base)
    if kind == "affine":
        return DiffusionFamily.affine(base, raw.get("state_slopes"))
    raise SimulationConfigError(
        f"diffusion.kind: unknown family {kind!r} (catalogue: constant, affine)"
    )


def _build_jump(raw: dict) -> JumpFamily:
    kind = _require(raw, "kind", "jump.")
    if kind != "linear-in-mark":
        raise SimulationConfigError(
            f"jump.kind: unknown family {kind!r} (catalogue: linear-in-mark)"
        )
    return JumpFamily.linear_in_mark(
        _require(raw, "base", "jump."), raw.get("state_slopes")
    )


def _build_regime(raw: dict) -> RegimeSchedule:
    name = _require(raw, "regime", "regime.")
    eps = _require(raw, "epsilons", "regime.")
    kwargs: dict = {}
    if name == "R2":
        kwargs["c"] = float(_require(raw, "c", "regime."))
        if "delta_coeff" in raw and raw["delta_coeff"] is not None:
            kwargs["delta_coeff"] = float(raw["delta_coeff"])
    elif "p" in raw and raw["p"] is not None:
        kwargs["p"] = float(raw["p"])
    return RegimeSchedule(regime=name, epsilons=tuple(eps), **kwargs)


def build_config(raw: dict) -> ExperimentConfig:
    """Validate a parsed JSON object into an ExperimentConfig."""
    sys_raw = _require(raw, "system", "")
    system = SystemSpec(
        A=_require(sys_raw, "A", "system."),
        B=_require(sys_raw, "B", "system."),
        K=_require(sys_raw, "K", "system."),
        y0=_require(sys_raw, "y0", "system."),
    )
    diffusion = _build_diffusion(_require(raw, "diffusion", ""))
    jump = _build_jump(_require(raw, "jump", ""))
    levy = _build_levy(_require(raw, "levy", ""))
    horizon = float(_require(raw, "horizon", ""))
    regime = _build_regime(_require(raw, "regime", ""))
    paths = int(_require(raw, "paths_per_point", ""))
    if paths < 2:
        raise SimulationConfigError(
            "paths_per_point: must be at least 2 (confidence interval undefined)"
        )
    seed = int(_require(raw, "master_seed", ""))
    step_raw = raw.get("internal_step", "auto")
    if step_raw == "auto" or step_raw is None:
        internal_step = None
    else:
        internal_step = float(step_raw)
        if not internal_step > 0:
            raise SimulationConfigError("internal_step: must be positive or 'auto'")
    config = ExperimentConfig(
        system=system,
        diffusion=diffusion,
        jump=jump,
        levy=levy,
        horizon=horizon,
        regime=regime,
        paths_per_point=paths,
        master_seed=seed,
        internal_step=internal_step,
        output_dir=str(raw.get("output_dir", "results")),
    )
    config.model()  # cross-field dimension checks
    if internal_step is not None:
        for e in regime.epsilons:
            d = regime.delta_of(e)
            if not internal_step <= d / 20.0:
                raise SimulationConfigError(
                    f"internal_step: {internal_step:g} exceeds delta/20 = "
                    f"{d / 20:g} at epsilon {e:g}"
                )
    return config


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise SimulationConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SimulationConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise SimulationConfigError("config must be a JSON object")
    return build_config(raw)


def apply_overrides(raw: dict, assignments: list[str]) -> dict:
    """Apply ``--set dotted.key=value`` assignments to a parsed config dict."""
    out = json.loads(json.dumps(raw))
    for item in assignments:
        if "=" not in item:
            raise SimulationConfigError(f"--set expects key=value, got {item!r}")
        key, _, text = item.partition("=")
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        node = out
        parts = key.strip().split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                node[part] = {}
            node = node[part]
        node[parts[-1]] = value
    return out


def default_config_dict() -> dict:
    """The shipped experiment: a planar oscillator under stabilising
    sample-and-hold feedback, affine diffusion, state-scaled jumps from a
    two-atom measure.  Every noise pathway is active and the open-loop and
    closed-loop generators differ, so sampling genuinely matters."""
    return {
        "system": {
            "A": [[0.0, 1.0], [-1.0, 0.0]],
            "B": [[1.0, 0.0], [0.0, 1.0]],
            "K": [[0.3, 1.0], [0.0, 0.3]],
            "y0": [1.0, 0.5],
        },
        "diffusion": {
            "kind": "affine",
            "base": [[0.2, 0.0], [0.0, 0.2]],
            "state_slopes": [
                [[0.05, 0.0], [0.0, 0.05]],
                [[0.0, 0.02], [0.02, 0.0]],
            ],
        },
        "jump": {
            "kind": "linear-in-mark",
            "base": [[1.0, 0.0], [0.0, 1.0]],
            "state_slopes": [
                [[0.1, 0.0], [0.0, 0.0]],
                [[0.0, 0.0], [0.0, 0.1]],
            ],
        },
        "levy": {
            "kind": "atomic",
            "atoms": [
                {"location": [0.3, -0.2], "mass": 1.5},
                {"location": [-0.25, 0.15], "mass": 1.0},
            ],
        },
        "horizon": 1.0,
        "regime": {
            "regime": "R2",
            "c": 1.0,
            "epsilons": [0.2, 0.1, 0.05, 0.025],
        },
        "paths_per_point": 2000,
        "master_seed": 20260809,
        "internal_step": "auto",
        "output_dir": "results",
    }


def default_config() -> ExperimentConfig:
    return build_config(default_config_dict())
