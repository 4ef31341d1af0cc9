"""Run configuration: dotted-key defaults, config-file parsing, flag merge.

Config files are UTF-8 `key = value` lines with `#` comments. Flags mirror
the dotted keys one-to-one and take precedence over the file, which takes
precedence over the defaults. Unknown keys are an error.
"""

from __future__ import annotations

from .errors import ConfigError

# key -> (type, default)
DEFAULTS = {
    "seed": (int, 0),
    "out": (str, "out"),
    "ckpt": (str, ""),
    "in": (str, ""),
    "schedule.T": (int, 100),
    "schedule.beta_start": (float, 1e-4),
    "schedule.beta_end": (float, 0.02),
    "model.image_side": (int, 8),
    "model.token_dim": (int, 32),
    "model.blocks": (int, 2),
    "model.num_classes": (int, 3),
    "model.cond_dropout": (float, 0.1),
    "model.init_seed": (int, 0),
    "data.n": (int, 2000),
    "data.seed": (int, 0),
    "train.steps": (int, 2000),
    "train.batch": (int, 32),
    "train.lr": (float, 1e-3),
    "train.beta1": (float, 0.9),
    "train.beta2": (float, 0.999),
    "train.eps": (float, 1e-8),
    "sampler.kind": (str, "ddim"),
    "sampler.steps": (int, 25),
    "sampler.n": (int, 16),
    "sampler.class": (int, -1),
    "sampler.trace_stride": (int, 0),
    "guidance.mode": (str, "none"),
    "guidance.s": (float, 1.0),
    "guidance.w": (float, 0.0),
    "guidance.perturb": (str, "identity"),
    "guidance.layers": (str, "deepest"),
    "guidance.ratio": (float, 0.25),
    "guidance.sigma": (float, 0.1),
    "guidance.kernel_size": (int, 5),
    "guidance.blur_sigma": (float, 1.0),
    "guidance.perturb_seed": (int, 0),
    "guidance.window_start": (float, 0.0),
    "guidance.window_end": (float, 1.0),
    "restore.task": (str, "inpaint"),
    "restore.rect": (str, "2,2,4,4"),
    "restore.eta": (float, 1.0),
    "restore.noise_std": (float, 0.0),
    "restore.factor": (int, 2),
    "restore.kernel_size": (int, 5),
    "restore.blur_sigma": (float, 1.0),
    "ablate.perturbs": (str, "identity"),
    "ablate.scales": (str, "0,1"),
    "ablate.layers": (str, "deepest"),
    "ablate.n": (int, 64),
    "ablate.ref_n": (int, 256),
    "eval.samples": (str, ""),
    "eval.reference": (str, ""),
    "eval.report": (str, ""),
    "eval.k": (int, 3),
}

# spec-level short flags -> dotted keys
ALIASES = {
    "sampler": "sampler.kind",
    "steps": "sampler.steps",
    "n": "sampler.n",
    "guidance": "guidance.mode",
    "perturb": "guidance.perturb",
    "layers": "guidance.layers",
    "task": "restore.task",
    "rect": "restore.rect",
    "eta": "restore.eta",
    "samples": "eval.samples",
    "reference": "eval.reference",
    "report": "eval.report",
}


class RunConfig:
    """Validated merged view of defaults, config file, and flag overrides."""

    def __init__(self, overrides: dict | None = None,
                 config_path: str | None = None):
        self._values = {key: default for key, (_, default) in
                        DEFAULTS.items()}
        if config_path:
            for key, raw in parse_config_file(config_path).items():
                self._set(key, raw)
        for key, raw in (overrides or {}).items():
            self._set(key, raw)

    def _set(self, key: str, raw) -> None:
        key = ALIASES.get(key, key)
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        typ, _ = DEFAULTS[key]
        try:
            self._values[key] = typ(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc

    def __getitem__(self, key: str):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        return self._values[key]


def parse_config_file(path: str) -> dict:
    out = {}
    try:
        with open(path, encoding="utf-8") as f:
            lines = f.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in stripped.split("=", 1))
        out[key] = value
    return out


def parse_int_list(text: str) -> list:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated integers, "
                          f"got {text!r}") from exc


def parse_float_list(text: str) -> list:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, "
                          f"got {text!r}") from exc
