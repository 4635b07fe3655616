"""Object-centric latent world model with masked joint-embedding prediction.

Subpackages/modules:
  numerics  - float64 tensors with reverse-mode autodiff, Adam, grad checks
  worldsim  - deterministic 2D push-world simulator and dataset files
  encoder   - frozen state-to-slot encoder and trainable auxiliary embedders
  masking   - object/token/tube masking with identity anchors
  predictor - bidirectional masked transformer, training loop, rollout
  planner   - CEM + MPC planning with Hungarian slot matching
  influence - linear-Gaussian oracles and influence-neighborhood estimation
  cli       - command-line entry point
"""

__version__ = "0.1.0"
