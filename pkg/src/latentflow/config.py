"""Flat ``key=value`` run configuration with typed, range-checked keys."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

COMMANDS = ("train", "eval-elbo", "estimate-loglik", "sample", "gradcheck", "compare-estimators")


class ConfigError(ValueError):
    def __init__(self, key: str, message: str, line: int | None = None, source: str = "flags"):
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {key}: {message}")
        self.key = key
        self.line = line


def _int_list(text: str) -> list[int]:
    text = text.strip()
    if text in ("", "none"):
        return []
    return [int(t) for t in text.split(",")]


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text: str):
    return None if text.strip().lower() in ("", "none", "off") else float(text)


def _dataset(text: str) -> str:
    if text in ("toy4", "lingauss") or (text.startswith("idx:") and len(text) > 4):
        return text
    raise ValueError("expected toy4, lingauss or idx:PATH")


def _choice(*options):
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parse


def _at_least(lo):
    return lambda v: v >= lo


# key -> (parser, default, range check or None, range description)
SCHEMA = {
    "posterior": (_choice("diag", "fullcov", "planar", "iaf"), "diag", None, ""),
    "latent_dim": (int, 2, _at_least(1), ">= 1"),
    "iaf_steps": (int, 2, _at_least(1), ">= 1"),
    "planar_steps": (int, 2, _at_least(1), ">= 1"),
    "context_dim": (int, 64, _at_least(0), ">= 0"),
    "made_hidden": (_int_list, [64, 64], lambda v: all(h >= 1 for h in v), "positive widths"),
    "iaf_gated": (_bool, True, None, ""),
    "iaf_reverse": (_bool, True, None, ""),
    "hidden": (_int_list, [64, 64], lambda v: all(h >= 1 for h in v), "positive widths"),
    "likelihood": (_choice("auto", "bernoulli", "gaussian"), "auto", None, ""),
    "obs_sigma": (float, 1.0, lambda v: v > 0, "> 0"),
    "dataset": (_dataset, "toy4", None, ""),
    "data_seed": (int, 0, _at_least(0), ">= 0"),
    "binarize": (_choice("threshold", "stochastic", "none"), "threshold", None, ""),
    "lingauss_n": (int, 1000, _at_least(1), ">= 1"),
    "lingauss_dim": (int, 4, _at_least(1), ">= 1"),
    "lingauss_latent": (int, 2, _at_least(1), ">= 1"),
    "holdout_fraction": (float, 0.0, lambda v: 0.0 <= v < 1.0, "in [0, 1)"),
    "steps": (int, 5000, _at_least(0), ">= 0"),
    "batch_size": (int, 32, _at_least(1), ">= 1"),
    "lr": (float, 1e-3, lambda v: v > 0, "> 0"),
    "optimizer": (_choice("sgd", "adam", "adamax"), "adam", None, ""),
    "seed": (int, 0, lambda v: 0 <= v < 2 ** 64, "unsigned 64-bit"),
    "free_bits": (_opt_float, None, lambda v: v is None or v >= 0, ">= 0"),
    "free_bits_groups": (int, 1, _at_least(1), ">= 1"),
    "anneal_steps": (int, 0, _at_least(0), ">= 0"),
    "L": (int, 100, _at_least(1), ">= 1"),
    "eval_every": (int, 0, _at_least(0), ">= 0"),
    "patience": (int, 10, _at_least(1), ">= 1"),
    "n_samples": (int, 16, _at_least(0), ">= 0"),
    "sample_means": (_bool, True, None, ""),
    "estimator_samples": (int, 10000, _at_least(2), ">= 2"),
}

FLAG_KEYS = {
    "seed": "seed",
    "L": "L",
    "posterior": "posterior",
    "iaf_steps": "iaf_steps",
    "free_bits": "free_bits",
    "anneal_steps": "anneal_steps",
    "dataset": "dataset",
}


def defaults() -> dict:
    return {k: (list(v[1]) if isinstance(v[1], list) else v[1]) for k, v in SCHEMA.items()}


def parse_value(key: str, text: str, line: int | None = None, source: str = "flags"):
    if key not in SCHEMA:
        raise ConfigError(key, "unknown key", line, source)
    parser, _, check, desc = SCHEMA[key]
    try:
        value = parser(text.strip())
    except ValueError as exc:
        raise ConfigError(key, f"type error: {exc}", line, source) from None
    if check is not None and not check(value):
        raise ConfigError(key, f"out of range: {value!r} (expected {desc})", line, source)
    return value


def parse_pairs(lines, source: str = "flags") -> dict:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(text, "expected key=value", lineno if source != "flags" else None, source)
        key, value = text.split("=", 1)
        key = key.strip()
        out[key] = parse_value(key, value, lineno if source != "flags" else None, source)
    return out


@dataclass
class RunSpec:
    command: str
    values: dict = field(default_factory=defaults)
    out: Path = Path("runs")
    resume: Path | None = None
    checkpoint: Path | None = None
    json: bool = False

    def __getitem__(self, key):
        return self.values[key]


def parse_config(command: str, config_path=None, overrides: dict | None = None,
                 pairs: list[str] | None = None, **paths) -> RunSpec:
    """Defaults, then the config file, then ``key=value`` pairs, then explicit flags."""
    if command not in COMMANDS:
        raise ConfigError("command", f"unknown command {command!r}")
    values = defaults()
    if config_path is not None:
        path = Path(config_path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        values.update(parse_pairs(path.read_text().splitlines(), source=str(path)))
    if pairs:
        values.update(parse_pairs(pairs))
    for key, raw in (overrides or {}).items():
        if raw is not None:
            values[key] = parse_value(key, str(raw))
    spec = RunSpec(command, values, **paths)
    validate(spec)
    return spec


def validate(spec: RunSpec):
    v = spec.values
    if v["free_bits"] is not None and v["latent_dim"] % v["free_bits_groups"]:
        raise ConfigError("free_bits_groups",
                          f"{v['free_bits_groups']} does not divide latent_dim={v['latent_dim']}")
    if v["free_bits_groups"] > v["latent_dim"]:
        raise ConfigError("free_bits_groups", "cannot exceed latent_dim")
    if spec.command == "compare-estimators" and v["latent_dim"] > 4:
        raise ConfigError("latent_dim", "compare-estimators is capped at latent_dim <= 4")
    if spec.resume is not None and not Path(spec.resume).is_file():
        raise FileNotFoundError(f"resume checkpoint not found: {spec.resume}")
    if spec.checkpoint is not None and not Path(spec.checkpoint).is_file():
        raise FileNotFoundError(f"checkpoint not found: {spec.checkpoint}")
    if v["dataset"].startswith("idx:") and not Path(v["dataset"][4:]).is_file():
        raise FileNotFoundError(f"IDX file not found: {v['dataset'][4:]}")
