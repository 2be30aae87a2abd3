"""Iterative design/generate/redesign loop for layout-controlled video generation.

The package splits into layers:

* ``layout``: the structured-design data model (keyframed boxes, prompts,
  guidance scales) with text/JSON serialization and interpolation.
* ``guidance``: top-k masked-attention energy, its analytic gradient, and a
  small differentiable sandbox model for latent-update experiments.
* ``chat``: chat-completion backends (HTTP, scripted replay, static).
* ``agents``: the planner plus the four redesign roles (verify, suggest,
  correct, structure) built on a chat backend, and parsing of their replies.
* ``oracle``: deterministic rule-based stand-ins for the same roles.
* ``generation``: generator clients (simulated and remote) and the failure
  model the simulator applies.
* ``workflow``: the closed loop tying everything together, plus run logging.
* ``analysis``: post-hoc statistics over run logs.
* ``cli``: the ``sceneloop`` command-line entry point.
"""
from __future__ import annotations

__version__ = "0.1.0"
