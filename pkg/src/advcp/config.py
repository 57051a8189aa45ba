"""Run configuration: flat ``key = value`` text with dotted section prefixes.

Example::

    alpha = 0.1
    seed = 7
    data.per_class = 150
    attacks.set = FGSM,PGD,SPSA,CW,Clean
    attacks.pgd.pgd_iters = 20
    score.kind = APS
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .attacks import ATTACK_KINDS, AttackSpec
from .errors import ConfigError, ParameterError
from .experiments import substream_seed
from .model import TrainConfig
from .scores import ScoreSpec

DEFAULT_ATTACK_SET = ("FGSM", "PGD", "SPSA", "CW", "Clean")
DEFAULT_DEFENSES = ("Normal", "FGSM", "PGD", "SPSA", "max", "min")

_TOP_LEVEL = {
    "alpha": float,
    "seed": int,
    "replications": int,
    "attack_target": str,
    "split.mode": str,
    "data.path": str,
    "data.num_classes": int,
    "data.dim": int,
    "data.per_class": int,
    "data.spread": float,
    "models.dir": str,
    "output.dir": str,
    "defenses": str,
    "attacks.set": str,
    "attacks.epsilon": float,
}


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _field_types(cls):
    conv = {int: int, float: float, bool: _bool, str: str, "int": int, "float": float, "bool": _bool, "str": str}
    return {f.name: conv[f.type] for f in fields(cls) if f.type in conv}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Raw ``key -> value`` strings. ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _names(text: str) -> tuple:
    return tuple(part.strip() for part in text.split(",") if part.strip())


@dataclass(frozen=True)
class RunConfig:
    alpha: float = 0.1
    seed: int = 0
    replications: int = 20
    attack_target: str = "f0"
    split_mode: str = "rq12"
    data_path: str | None = None
    num_classes: int = 3
    dim: int = 16
    per_class: int = 150
    spread: float = 0.08
    models_dir: str | None = None
    output_dir: str = "out"
    defenses: tuple = DEFAULT_DEFENSES
    attack_set: tuple = DEFAULT_ATTACK_SET
    attack_specs: dict = field(default_factory=dict)
    score: ScoreSpec = field(default_factory=ScoreSpec)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.attack_target not in ("f0", "fk"):
            raise ConfigError("attack_target must be f0 or fk")
        if self.split_mode not in ("rq12", "rq3"):
            raise ConfigError("split.mode must be rq12 or rq3")
        for name in self.attack_set:
            if name not in ATTACK_KINDS:
                raise ConfigError(f"unknown attack {name!r} in attacks.set")
        for name in self.defenses:
            if name not in ("Normal", "max", "min") and name not in ATTACK_KINDS:
                raise ConfigError(f"unknown defense {name!r}")

    def attacks(self) -> list[AttackSpec]:
        return [self.attack_specs[name] for name in self.attack_set]


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a config file (optional) and apply ``overrides`` (already-typed values for ``seed``/``output.dir``)."""
    raw = {}
    if path is not None:
        try:
            raw = parse_config_text(Path(path).read_text(encoding="utf-8"), str(path))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
    return build_config(raw, overrides or {})


def build_config(raw: dict[str, str], overrides: dict | None = None) -> RunConfig:
    overrides = overrides or {}
    top, attack_raw, score_raw, train_raw = {}, {}, {}, {}
    attack_fields = _field_types(AttackSpec)
    score_fields = _field_types(ScoreSpec)
    train_fields = _field_types(TrainConfig)
    try:
        for key, value in raw.items():
            if key in _TOP_LEVEL:
                top[key] = _TOP_LEVEL[key](value)
            elif key.startswith("attacks.") and key.count(".") == 2:
                _, kind, name = key.split(".")
                kinds = {k.lower(): k for k in ATTACK_KINDS}
                if kind not in kinds or name not in attack_fields or name == "kind":
                    raise ConfigError(f"unknown config key {key!r}")
                attack_raw.setdefault(kinds[kind], {})[name] = attack_fields[name](value)
            elif key.startswith("score.") and key[6:] in score_fields:
                score_raw[key[6:]] = score_fields[key[6:]](value)
            elif key.startswith("train.") and key[6:] in train_fields:
                train_raw[key[6:]] = train_fields[key[6:]](value)
            else:
                raise ConfigError(f"unknown config key {key!r}")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad config value: {exc}") from None

    seed = overrides.get("seed", top.get("seed", 0))
    epsilon = top.get("attacks.epsilon", 0.1)
    try:
        specs = {}
        for kind in ATTACK_KINDS:
            params = {"epsilon": epsilon, "seed": substream_seed(seed, f"attack/{kind}")}
            params.update(attack_raw.get(kind, {}))
            specs[kind] = AttackSpec(kind=kind, **params)
        score = ScoreSpec(**{"vrcp_epsilon": epsilon, "seed": substream_seed(seed, "score"), **score_raw})
        train = TrainConfig(**{"seed": seed, **train_raw})
        return RunConfig(
            alpha=top.get("alpha", 0.1),
            seed=seed,
            replications=top.get("replications", 20),
            attack_target=top.get("attack_target", "f0"),
            split_mode=top.get("split.mode", "rq12"),
            data_path=top.get("data.path") or None,
            num_classes=top.get("data.num_classes", 3),
            dim=top.get("data.dim", 16),
            per_class=top.get("data.per_class", 150),
            spread=top.get("data.spread", 0.08),
            models_dir=top.get("models.dir") or None,
            output_dir=overrides.get("output.dir", top.get("output.dir", "out")),
            defenses=_names(top["defenses"]) if "defenses" in top else DEFAULT_DEFENSES,
            attack_set=_names(top["attacks.set"]) if "attacks.set" in top else DEFAULT_ATTACK_SET,
            attack_specs=specs,
            score=score,
            train=train,
        )
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None


def dump_config(cfg: RunConfig) -> str:
    """Fully resolved config in the same key = value format."""
    lines = [
        f"alpha = {cfg.alpha!r}",
        f"seed = {cfg.seed}",
        f"replications = {cfg.replications}",
        f"attack_target = {cfg.attack_target}",
        f"split.mode = {cfg.split_mode}",
    ]
    if cfg.data_path:
        lines.append(f"data.path = {cfg.data_path}")
    lines += [
        f"data.num_classes = {cfg.num_classes}",
        f"data.dim = {cfg.dim}",
        f"data.per_class = {cfg.per_class}",
        f"data.spread = {cfg.spread!r}",
    ]
    if cfg.models_dir:
        lines.append(f"models.dir = {cfg.models_dir}")
    lines += [f"defenses = {','.join(cfg.defenses)}", f"attacks.set = {','.join(cfg.attack_set)}"]
    for kind, spec in cfg.attack_specs.items():
        for name, value in spec.to_dict().items():
            if name != "kind":
                lines.append(f"attacks.{kind.lower()}.{name} = {value!r}" if isinstance(value, float)
                             else f"attacks.{kind.lower()}.{name} = {value}")
    for prefix, obj in (("score", cfg.score), ("train", cfg.train)):
        for f in fields(obj):
            value = getattr(obj, f.name)
            lines.append(f"{prefix}.{f.name} = {value!r}" if isinstance(value, float) else f"{prefix}.{f.name} = {value}")
    return "\n".join(lines) + "\n"
