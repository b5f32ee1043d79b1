# Copyright 2026 The aLoRA Engine Authors.
# SPDX-License-Identifier: Apache-2.0
"""Activated LoRA inference engine: deterministic toy transformer, KV-cache
reuse across base and adapter passes, exact cost accounting, and adapter
training."""

try:
    from ._alora import *  # noqa: F401,F403
except ImportError:  # in-tree build: extension next to the build outputs
    from _alora import *  # type: ignore  # noqa: F401,F403

__version__ = "0.1.0"
