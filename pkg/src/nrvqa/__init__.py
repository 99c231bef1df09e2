"""No-reference video quality assessment toolkit.

Pipeline: decode raw video into one-second clips, extract semantic /
distortion / motion features per clip, fuse them through a trainable
regressor into quality scores, and evaluate predictions against mean
opinion scores from subjective studies.  A companion HTTP service collects
the subjective ratings.
"""

__version__ = "0.1.0"
