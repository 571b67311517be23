"""Key=value run configuration files and run manifests.

One `key=value` pair per line; `#` starts a comment. Flag overrides win over
file values. Every subcommand writes a manifest echoing the full effective
configuration so the run can be reproduced bit-exactly.
"""

from __future__ import annotations

from .errors import InputError, ParseError


def parse_config_text(text):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"config line {lineno}: expected key=value, got {raw!r}")
        k, _, v = line.partition("=")
        out[k.strip()] = v.strip()
    return out


def read_config(path):
    with open(path) as f:
        return parse_config_text(f.read())


def coerce(value, typ):
    if typ is bool:
        if value in ("1", "true", "yes", "on"):
            return True
        if value in ("0", "false", "no", "off"):
            return False
        raise InputError(f"not a boolean: {value!r}")
    return typ(value)


def merged(file_cfg, overrides):
    out = dict(file_cfg)
    for k, v in overrides.items():
        if v is not None:
            out[k] = v
    return out


def write_manifest(path, effective):
    lines = [f"{k}={effective[k]}" for k in sorted(effective)]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
