"""rfmlab: a desk-scale lab for attention-guided erasing augmentation.

Pipeline pieces: pixel primitives (imaging), a differentiable two-logit
detector (detector), forgery attention maps (saliency), guided and baseline
erasers (erasing), synthetic datasets with ground-truth masks (data),
detection metrics (metrics), and the training/evaluation harness with its
CLI (harness, visualize, cli).
"""

__version__ = "0.1.0"
