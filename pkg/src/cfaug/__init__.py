"""Counterfactual data augmentation for imitation-learned driving.

The package wires together a deterministic 2D lane-world simulator, a
rule-based expert driver, a gradient-boosted tree distillation of that
expert, a diversity-aware counterfactual search against the tree model,
dataset augmentation with expert-relabelled counterfactual scenes, a small
waypoint-predicting imitation network, and a leaderboard-style evaluation
harness. Each stage is exposed both as a library module and as a `cfaug`
CLI subcommand.
"""

__version__ = "0.1.0"
