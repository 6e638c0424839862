"""Backend resolution: pretrained networks, extensions, or the reference.

The package ships no network code or weights.  For a roster method the
resolution order is:

1. ``MATCHER_ADAPTERS_BACKEND=reference`` forces the built-in
   correlation backend (testing and CI).
2. Otherwise the method's checkpoint must exist (explicit ``--weights``
   path, else ``$MATCHER_ADAPTERS_WEIGHTS/<file>``, else
   ``~/.cache/matcher_adapters/<file>``) and an inference extension
   module ``matcher_adapters.ext.<method>`` must be importable and
   expose ``run(image_a, image_b, weights, spec)``.

Missing pieces raise errors whose messages contain the exact fetch or
install steps.
"""

from __future__ import annotations

import importlib
import os
from functools import partial
from pathlib import Path

from . import reference
from .errors import BackendUnavailableError, MissingWeightsError
from .spec import AdapterSpec
from .tiling import Runner

BACKEND_ENV = "MATCHER_ADAPTERS_BACKEND"
WEIGHTS_ENV = "MATCHER_ADAPTERS_WEIGHTS"
DEFAULT_WEIGHTS_DIR = "~/.cache/matcher_adapters"


def weights_dir() -> Path:
    configured = os.environ.get(WEIGHTS_ENV)
    return Path(configured) if configured else Path(DEFAULT_WEIGHTS_DIR).expanduser()


def resolve_weights(spec: AdapterSpec) -> Path:
    """Locate the checkpoint for ``spec`` or raise with fetch instructions."""
    if spec.weights is not None:
        explicit = Path(spec.weights)
        if explicit.is_file():
            return explicit
        raise MissingWeightsError(
            f"weights file {explicit} does not exist")
    directory = weights_dir()
    path = directory / spec.info.weights_file
    if path.is_file():
        return path
    raise MissingWeightsError(
        f"no weights found for {spec.method!r}: expected {path}\n"
        f"Download {spec.info.weights_file} from {spec.info.source} and "
        f"place it there, for example:\n"
        f"  mkdir -p {directory}\n"
        f"  curl -L -o {path} <release asset URL from {spec.info.source}>\n"
        f"or point {WEIGHTS_ENV} at a directory that already has it, or "
        f"pass --weights /path/to/{spec.info.weights_file}")


def _extension_module(method: str):
    name = "matcher_adapters.ext." + method.replace("-", "_")
    try:
        return importlib.import_module(name)
    except ImportError as exc:
        raise BackendUnavailableError(
            f"no inference code installed for {method!r}: module {name} is "
            f"not importable ({exc}).\n"
            f"Install the method's inference stack and provide that module "
            f"with a run(image_a, image_b, weights, spec) function, or set "
            f"{BACKEND_ENV}=reference to use the built-in correlation "
            f"backend") from exc


def load_runner(spec: AdapterSpec) -> Runner:
    """Return a ``runner(img_a, img_b) -> (p1, p2, scores)`` for ``spec``."""
    override = os.environ.get(BACKEND_ENV, "").strip()
    if override:
        if override == "reference":
            return reference.make_runner(spec.info.protocol)
        raise BackendUnavailableError(
            f"unknown {BACKEND_ENV} value {override!r}; "
            f"the only built-in override is 'reference'")
    weights = resolve_weights(spec)
    module = _extension_module(spec.method)
    return partial(module.run, weights=weights, spec=spec)
