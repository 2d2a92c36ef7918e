"""Sectioned key-value run configuration.

Format::

    # comment
    [section]
    key = value

Every error is collected with its line number before anything is raised.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .model import FormulaError, MESpec, ModelSpec, format_formula, parse_formula
from .sampler import ChainConfig

__all__ = ["ConfigError", "RunConfig", "SCHEMA", "parse_config", "serialize_config", "load_config"]

FAMILIES = ("beta", "gaussian")

# section -> key -> (type, default); default None means optional, REQUIRED must be given
REQUIRED = object()
SCHEMA = {
    "run": {
        "name": (str, "model"),
        "seed": (int, 1),
        "output": (str, "output"),
    },
    "data": {
        "path": (str, REQUIRED),
        "response": (str, "y"),
        "stack": (str, ""),
        "stack_label": (str, "period"),
    },
    "model": {
        "family": (str, REQUIRED),
        "mu": ("formula", "1"),
        "sigma2": ("formula", "1"),
    },
    "me": {
        "pattern": (str, ""),
        "f": (float, 1.0),
        "bins": (int, 1000),
        "tau2_mu": (float, 1000000.0),
        "a_x": (float, 0.001),
        "b_x": (float, 0.001),
    },
    "chain": {
        "iterations": (int, 10000),
        "burnin": (int, 5000),
        "thinning": (int, 5),
        "step": (float, 0.05),
        "omega_points": (int, 11),
        "latent_thin": (int, 10),
    },
    "evaluate": {
        "folds": (int, 10),
        "grid_points": (int, 200),
    },
}


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


@dataclass
class RunConfig:
    name: str = "model"
    seed: int = 1
    output: str = "output"
    data_path: str = ""
    response: str = "y"
    stack: tuple = ()
    stack_label: str = "period"
    model: ModelSpec = field(default_factory=ModelSpec)
    me_pattern: str = ""
    chain: dict = field(default_factory=lambda: {k: d for k, (_, d) in SCHEMA["chain"].items()})
    folds: int = 10
    grid_points: int = 200

    def chain_config(self, **overrides) -> ChainConfig:
        c = self.chain
        kw = dict(iterations=c["iterations"], burnin=c["burnin"], thinning=c["thinning"],
                  seed=self.seed, default_step=c["step"], omega_points=c["omega_points"],
                  latent_thin=c["latent_thin"])
        kw.update(overrides)
        return ChainConfig(**kw)


def _parse_pattern(text):
    """``"sigma2=1, c_u=0.8"`` -> ``(1.0, 0.8)``."""
    vals = {}
    for part in text.split(","):
        if not part.strip():
            continue
        if "=" not in part:
            raise ValueError(f"expected key=value in pattern, got {part.strip()!r}")
        k, v = (s.strip() for s in part.split("=", 1))
        if k not in ("sigma2", "c_u"):
            raise ValueError(f"unknown pattern key {k!r} (allowed: sigma2, c_u)")
        vals[k] = float(v)
    if "sigma2" not in vals:
        raise ValueError("pattern needs sigma2")
    return vals["sigma2"], vals.get("c_u", 0.0)


def _lex(text):
    """Yield ``(lineno, section, key, value)``; errors collected separately."""
    section = None
    items, errors = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith(("#", ";")):
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                errors.append(f"line {lineno}: malformed section header {line!r}")
                continue
            section = line[1:-1].strip()
            if section not in SCHEMA:
                errors.append(f"line {lineno}: unknown section [{section}]; allowed: {', '.join(SCHEMA)}")
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value', got {line!r}")
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        if section is None:
            errors.append(f"line {lineno}: key {key!r} outside any section")
            continue
        items.append((lineno, section, key, value))
    return items, errors


def parse_config(text: str) -> RunConfig:
    """Validate config text; raises :class:`ConfigError` listing every problem."""
    items, errors = _lex(text)
    values, where = {}, {}
    for lineno, section, key, value in items:
        if section not in SCHEMA:
            continue
        if key not in SCHEMA[section]:
            errors.append(
                f"line {lineno}: unknown key {key!r} in [{section}]; allowed: {', '.join(SCHEMA[section])}"
            )
            continue
        if (section, key) in values:
            errors.append(f"line {lineno}: duplicate key {key!r} in [{section}] (first on line {where[section, key]})")
            continue
        typ = SCHEMA[section][key][0]
        try:
            if typ == "formula":
                parsed = parse_formula(value)
            else:
                parsed = typ(value)
        except (ValueError, FormulaError) as exc:
            tname = "formula" if typ == "formula" else typ.__name__
            errors.append(f"line {lineno}: [{section}] {key} = {value!r} is not a valid {tname}: {exc}")
            continue
        values[section, key] = parsed
        where[section, key] = lineno

    for section, keys in SCHEMA.items():
        for key, (typ, default) in keys.items():
            if default is REQUIRED and (section, key) not in values:
                errors.append(f"missing required key {key!r} in [{section}]")

    family = values.get(("model", "family"))
    if family is not None and family.lower() not in FAMILIES:
        errors.append(
            f"line {where['model', 'family']}: [model] family = {family!r} is not allowed; "
            f"allowed values: {', '.join(FAMILIES)}"
        )

    def get(section, key):
        if (section, key) in values:
            return values[section, key]
        default = SCHEMA[section][key][1]
        if SCHEMA[section][key][0] == "formula":
            return parse_formula(default)
        return default

    pattern = get("me", "pattern")
    sigma2 = c_u = None
    if pattern:
        try:
            sigma2, c_u = _parse_pattern(pattern)
        except ValueError as exc:
            errors.append(f"line {where['me', 'pattern']}: [me] pattern: {exc}")

    mu, s2 = get("model", "mu"), get("model", "sigma2")
    n_me = sum(t.kind == "me_pspline" for t in mu + s2)
    if n_me > 1:
        errors.append("at most one me_pspline term per model is supported")

    chain = {k: get("chain", k) for k in SCHEMA["chain"]}
    if chain["thinning"] < 1:
        errors.append(f"line {where.get(('chain', 'thinning'), '?')}: thinning must be >= 1")
    if not 0 <= chain["burnin"] < chain["iterations"]:
        errors.append("[chain] burnin must be >= 0 and smaller than iterations")
    if get("evaluate", "folds") < 2:
        errors.append("[evaluate] folds must be >= 2")

    if errors:
        raise ConfigError(errors)

    me = MESpec(sigma2=sigma2, c_u=c_u, f=get("me", "f"), bins=get("me", "bins"),
                tau2_mu=get("me", "tau2_mu"), a_x=get("me", "a_x"), b_x=get("me", "b_x"))
    stack = tuple(s.strip() for s in get("data", "stack").split(",") if s.strip())
    return RunConfig(
        name=get("run", "name"),
        seed=get("run", "seed"),
        output=get("run", "output"),
        data_path=get("data", "path"),
        response=get("data", "response"),
        stack=stack,
        stack_label=get("data", "stack_label"),
        model=ModelSpec(family.lower(), mu, s2, me),
        me_pattern=pattern,
        chain=chain,
        folds=get("evaluate", "folds"),
        grid_points=get("evaluate", "grid_points"),
    )


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize_config(cfg: RunConfig) -> str:
    """Canonical text form; ``parse_config(serialize_config(c)) == c``."""
    me = cfg.model.me
    sections = {
        "run": {"name": cfg.name, "seed": cfg.seed, "output": cfg.output},
        "data": {"path": cfg.data_path, "response": cfg.response,
                 "stack": ", ".join(cfg.stack), "stack_label": cfg.stack_label},
        "model": {"family": cfg.model.family, "mu": format_formula(cfg.model.mu),
                  "sigma2": format_formula(cfg.model.sigma2)},
        "me": {"pattern": cfg.me_pattern, "f": me.f, "bins": me.bins, "tau2_mu": me.tau2_mu,
               "a_x": me.a_x, "b_x": me.b_x},
        "chain": dict(cfg.chain),
        "evaluate": {"folds": cfg.folds, "grid_points": cfg.grid_points},
    }
    lines = []
    for name, keys in sections.items():
        if lines:
            lines.append("")
        lines.append(f"[{name}]")
        for key in SCHEMA[name]:
            lines.append(f"{key} = {_fmt(keys[key])}".rstrip())
    return "\n".join(lines) + "\n"


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())
