"""Flat key=value run configuration.

The file format is UTF-8 lines of ``section.key = value`` with ``#``
comments.  Emission is canonical (fixed key order, resolved defaults), so
parse -> emit -> parse is a fixpoint.  Documented keys:

  architecture.m / .r / .f        ints (m, r required)
  architecture.variant            full | no_long_term | no_short_term
  architecture.multi_supervised   true | false
  architecture.alpha              float in [0,1]; defaults to 1/(m+1)
  task.kind                       denoise | super_resolve | jpeg
  task.sigma / .scale / .quality  value or comma list, per kind
  train.lr / .lr_drop_every / .lr_drop_factor / .momentum /
        .weight_decay / .batch_size / .clip_norm / .epochs / .seed
  paths.train_dir / .test_dir / .checkpoint / .output_dir
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .network import MemNetConfig
from .optim import TrainConfig
from .pipeline import DegradationSpec


@dataclass
class RunConfig:
    arch: MemNetConfig
    train: TrainConfig
    task: list[DegradationSpec]
    train_dir: str = ""
    test_dir: str = ""
    checkpoint: str = ""
    output_dir: str = ""

    @property
    def task_kind(self) -> str:
        return self.task[0].kind


def _parse_bool(value: str, key: str) -> bool:
    if value == "true":
        return True
    if value == "false":
        return False
    raise ValueError(f"{key} must be 'true' or 'false', got {value!r}")


def _parse_pairs(text: str) -> dict:
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        if key in pairs:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        pairs[key] = value
    return pairs


_KNOWN_KEYS = {
    "architecture.m", "architecture.r", "architecture.f", "architecture.variant",
    "architecture.multi_supervised", "architecture.alpha",
    "task.kind", "task.sigma", "task.scale", "task.quality",
    "train.lr", "train.lr_drop_every", "train.lr_drop_factor", "train.momentum",
    "train.weight_decay", "train.batch_size", "train.clip_norm", "train.epochs",
    "train.seed",
    "paths.train_dir", "paths.test_dir", "paths.checkpoint", "paths.output_dir",
}


def _build_task(kind: str, pairs: dict) -> list[DegradationSpec]:
    levels_key, caster, spec_field = {
        "denoise": ("task.sigma", float, "sigma"),
        "super_resolve": ("task.scale", int, "scale"),
        "jpeg": ("task.quality", int, "quality"),
    }.get(kind, (None, None, None))
    if levels_key is None:
        raise ValueError(f"task.kind must be denoise, super_resolve, or jpeg, got {kind!r}")
    if levels_key not in pairs:
        raise ValueError(f"task.kind={kind} requires {levels_key}")
    for other in ("task.sigma", "task.scale", "task.quality"):
        if other != levels_key and other in pairs:
            raise ValueError(f"{other} does not apply to task.kind={kind}")
    levels = [caster(tok.strip()) for tok in pairs[levels_key].split(",") if tok.strip()]
    if not levels:
        raise ValueError(f"{levels_key} lists no values")
    return [DegradationSpec(kind, **{spec_field: lv}) for lv in levels]


def parse_config(text: str) -> RunConfig:
    pairs = _parse_pairs(text)
    unknown = set(pairs) - _KNOWN_KEYS
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for required in ("architecture.m", "architecture.r", "task.kind"):
        if required not in pairs:
            raise ValueError(f"missing required key {required}")

    try:
        arch = MemNetConfig(
            m=int(pairs["architecture.m"]),
            r=int(pairs["architecture.r"]),
            f=int(pairs.get("architecture.f", "64")),
            variant=pairs.get("architecture.variant", "full"),
            multi_supervised=_parse_bool(
                pairs.get("architecture.multi_supervised", "false"),
                "architecture.multi_supervised"),
            alpha=float(pairs["architecture.alpha"]) if "architecture.alpha" in pairs else -1.0,
        )
        clip = pairs.get("train.clip_norm", "")
        train = TrainConfig(
            base_lr=float(pairs.get("train.lr", "0.1")),
            lr_drop_every=int(pairs.get("train.lr_drop_every", "20")),
            lr_drop_factor=float(pairs.get("train.lr_drop_factor", "10")),
            momentum=float(pairs.get("train.momentum", "0.9")),
            weight_decay=float(pairs.get("train.weight_decay", "0.0001")),
            batch_size=int(pairs.get("train.batch_size", "64")),
            clip_norm=float(clip) if clip else None,
            epochs=int(pairs.get("train.epochs", "50")),
            seed=int(pairs.get("train.seed", "0")),
        )
        task = _build_task(pairs["task.kind"], pairs)
    except ValueError:
        raise
    except Exception as err:  # int()/float() failures carry poor context
        raise ValueError(f"bad config value: {err}") from err

    return RunConfig(
        arch=arch, train=train, task=task,
        train_dir=pairs.get("paths.train_dir", ""),
        test_dir=pairs.get("paths.test_dir", ""),
        checkpoint=pairs.get("paths.checkpoint", ""),
        output_dir=pairs.get("paths.output_dir", ""),
    )


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_arch(arch: MemNetConfig) -> str:
    """Canonical architecture block (also embedded in checkpoints)."""
    lines = [
        f"architecture.m = {arch.m}",
        f"architecture.r = {arch.r}",
        f"architecture.f = {arch.f}",
        f"architecture.variant = {arch.variant}",
        f"architecture.multi_supervised = {_fmt(arch.multi_supervised)}",
        f"architecture.alpha = {_fmt(arch.alpha)}",
    ]
    return "\n".join(lines) + "\n"


def emit_config(cfg: RunConfig) -> str:
    kind = cfg.task_kind
    levels_key, values = {
        "denoise": ("task.sigma", [s.sigma for s in cfg.task]),
        "super_resolve": ("task.scale", [s.scale for s in cfg.task]),
        "jpeg": ("task.quality", [s.quality for s in cfg.task]),
    }[kind]
    lines = [emit_arch(cfg.arch).rstrip("\n")]
    lines.append(f"task.kind = {kind}")
    lines.append(f"{levels_key} = " + ",".join(_fmt(v) for v in values))
    t = cfg.train
    lines.append(f"train.lr = {_fmt(t.base_lr)}")
    lines.append(f"train.lr_drop_every = {t.lr_drop_every}")
    lines.append(f"train.lr_drop_factor = {_fmt(t.lr_drop_factor)}")
    lines.append(f"train.momentum = {_fmt(t.momentum)}")
    lines.append(f"train.weight_decay = {_fmt(t.weight_decay)}")
    lines.append(f"train.batch_size = {t.batch_size}")
    if t.clip_norm is not None:
        lines.append(f"train.clip_norm = {_fmt(t.clip_norm)}")
    lines.append(f"train.epochs = {t.epochs}")
    lines.append(f"train.seed = {t.seed}")
    for key, value in (("paths.train_dir", cfg.train_dir), ("paths.test_dir", cfg.test_dir),
                       ("paths.checkpoint", cfg.checkpoint), ("paths.output_dir", cfg.output_dir)):
        if value:
            lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def parse_arch(text: str) -> MemNetConfig:
    """Parse a checkpoint's embedded architecture block."""
    pairs = _parse_pairs(text)
    unknown = set(pairs) - {k for k in _KNOWN_KEYS if k.startswith("architecture.")}
    if unknown:
        raise ValueError(f"unexpected keys in architecture block: {', '.join(sorted(unknown))}")
    return MemNetConfig(
        m=int(pairs["architecture.m"]),
        r=int(pairs["architecture.r"]),
        f=int(pairs.get("architecture.f", "64")),
        variant=pairs.get("architecture.variant", "full"),
        multi_supervised=_parse_bool(
            pairs.get("architecture.multi_supervised", "false"),
            "architecture.multi_supervised"),
        alpha=float(pairs["architecture.alpha"]) if "architecture.alpha" in pairs else -1.0,
    )


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(emit_config(cfg))
