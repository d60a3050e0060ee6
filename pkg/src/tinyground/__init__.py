"""Desk-scale grounded vision-language modeling testbed.

A tiny multimodal decoder that answers queries about rendered scenes and
regresses oriented bounding boxes through a dedicated head, interfaced by
paired control tokens in the answer stream. Ships with a synthetic scene
generator, a training loop with a permutation-invariant box loss, a greedy
decoder, and an evaluation kit (rotated IoU accuracy, cumulative IoU
curves, ROUGE text metrics).
"""

__version__ = "0.1.0"
