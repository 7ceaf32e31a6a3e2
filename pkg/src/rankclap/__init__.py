"""rankclap: cross-modal ranked-contrast representation learning toolkit.

Trains two-tower projections over paired audio/text feature vectors with a
rank-ordered contrastive objective (plus symmetric cross-entropy and
supervised-contrast baselines) on valence-arousal labels, and evaluates
cross-modal alignment and ordinal consistency.
"""

__version__ = "0.1.0"
