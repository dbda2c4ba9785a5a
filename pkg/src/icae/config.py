"""Line-based ``key = value`` experiment configuration."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Any, Callable, Optional

from .errors import ConfigurationError


def _ints(text: str) -> tuple[int, ...]:
    parts = [p.strip() for p in text.replace("(", "").replace(")", "").split(",") if p.strip()]
    return tuple(int(p) for p in parts)


def _opt_int(text: str) -> Optional[int]:
    return None if text.strip().lower() in ("", "auto", "none") else int(text)


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return v


_POS = (lambda v: v > 0, "> 0")
_NONNEG = (lambda v: v >= 0, ">= 0")
_AT_LEAST_1 = (lambda v: v >= 1, ">= 1")
_AT_LEAST_2 = (lambda v: v >= 2, ">= 2")


def _choice(*opts):
    return (lambda v: v in opts, "one of " + "|".join(opts))


# key -> (parser, default, (check, description) or None)
SCHEMA: dict[str, tuple[Callable[[str], Any], Any, Optional[tuple]]] = {
    "k_s": (int, 20, _AT_LEAST_2),
    "k_c": (int, 5, _AT_LEAST_2),
    "d_u": (int, 8, _AT_LEAST_1),
    "d_c": (int, 4, _AT_LEAST_1),
    "mixing": (str, "affine", _choice("affine", "smooth")),
    "alpha": (float, 0.5, (lambda v: 0 <= v < 1, "in [0, 1)")),
    "prior_ratio": (float, 0.8, (lambda v: 0 < v < 1, "in (0, 1)")),
    "n_train": (int, 20000, _AT_LEAST_1),
    "n_eval": (int, 2000, _AT_LEAST_1),
    "k_units": (_opt_int, None, (lambda v: v is None or v >= 1, ">= 1 or auto")),
    "label_order": (str, "pca", _choice("pca", "kmeans")),
    "d_latent": (int, 1, _AT_LEAST_1),
    "hidden_dims": (_ints, (64, 64), (lambda v: all(d >= 1 for d in v), "positive integers")),
    "activation": (str, "tanh", _choice("tanh", "relu", "identity")),
    "target_spacing": (float, 1.0, _POS),
    "lambda": (float, 1.0, _NONNEG),
    "lr": (float, 5e-3, _POS),
    "lr_schedule": (str, "cosine", _choice("constant", "cosine")),
    "batch_size": (int, 64, _AT_LEAST_1),
    "epochs": (int, 200, _NONNEG),
    "seed": (_seed, 0, None),
    "n_perm": (int, 199, (lambda v: v >= 99, ">= 99")),
    "hsic_n": (int, 2000, _AT_LEAST_2),
    "hsic_alpha": (float, 0.05, (lambda v: 0 < v < 1, "in (0, 1)")),
    "gap_tol": (float, 1e-3, _NONNEG),
    "margin_tol": (float, 1e-3, _NONNEG),
    "spread_tol": (float, 0.25, _POS),
    "lipschitz_pairs": (int, 2000, _NONNEG),
    "input_path": (str, "", None),
    "input_format": (str, "auto", _choice("auto", "binary", "csv")),
}

_FIELD_NAME = {"lambda": "lam"}


@dataclass(frozen=True)
class ExperimentConfig:
    k_s: int = 20
    k_c: int = 5
    d_u: int = 8
    d_c: int = 4
    mixing: str = "affine"
    alpha: float = 0.5
    prior_ratio: float = 0.8
    n_train: int = 20000
    n_eval: int = 2000
    k_units: Optional[int] = None
    label_order: str = "pca"
    d_latent: int = 1
    hidden_dims: tuple = (64, 64)
    activation: str = "tanh"
    target_spacing: float = 1.0
    lam: float = 1.0
    lr: float = 5e-3
    lr_schedule: str = "cosine"
    batch_size: int = 64
    epochs: int = 200
    seed: int = 0
    n_perm: int = 199
    hsic_n: int = 2000
    hsic_alpha: float = 0.05
    gap_tol: float = 1e-3
    margin_tol: float = 1e-3
    spread_tol: float = 0.25
    lipschitz_pairs: int = 2000
    input_path: str = ""
    input_format: str = "auto"

    @property
    def synthetic(self) -> bool:
        return not self.input_path

    @property
    def units(self) -> int:
        """Proxy unit count: explicit, else k_s on synthetic data and 100 otherwise."""
        if self.k_units is not None:
            return self.k_units
        return self.k_s if self.synthetic else 100

    def get(self, key: str):
        return getattr(self, _FIELD_NAME.get(key, key))

    def with_overrides(self, **kw) -> "ExperimentConfig":
        mapped = {_FIELD_NAME.get(k, k): v for k, v in kw.items()}
        cfg = replace(self, **mapped)
        for key, (_, _, check) in SCHEMA.items():
            _validate(key, cfg.get(key), check, None)
        return cfg


assert {f.name for f in fields(ExperimentConfig)} == {_FIELD_NAME.get(k, k) for k in SCHEMA}


def _validate(key, value, check, lineno):
    if check is not None and not check[0](value):
        where = f"line {lineno}: " if lineno is not None else ""
        raise ConfigurationError(f"{where}{key} must be {check[1]} (got {value!r})")


def parse_config(text: str) -> ExperimentConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unset keys keep defaults."""
    values = {}
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, val = (part.strip() for part in line.partition("="))
        if key not in SCHEMA:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigurationError(f"line {lineno}: {key} already set on line {seen[key]}")
        parser, _, check = SCHEMA[key]
        try:
            value = parser(val)
        except ValueError as exc:
            raise ConfigurationError(f"line {lineno}: {key}: {exc}") from None
        _validate(key, value, check, lineno)
        values[_FIELD_NAME.get(key, key)] = value
        seen[key] = lineno
    return ExperimentConfig(**values)


def _format(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def serialize_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{key} = {_format(cfg.get(key))}\n" for key in SCHEMA)


def config_dict(cfg: ExperimentConfig) -> dict:
    return {key: (list(v) if isinstance(v, tuple) else v) for key in SCHEMA for v in [cfg.get(key)]}
