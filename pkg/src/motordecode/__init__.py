"""Decoding reach smoothness from pre-movement EEG with a population prior.

Modules
-------
kinematics
    Trajectories, finite-difference jerk and the NARJ smoothness score.
spectral
    Welch spectra, band power and magnitude-squared coherence.
features
    EEG recordings, referencing, go-cue windows and feature tensors.
transfer
    Subject ridge fits, the population prior and Bayesian personalization.
stats
    Permutation tests and the group uniformity test.
encoding
    Channel by band encoding topographies.
simulate
    Synthetic trajectories, EEG, cohorts and sessions.
"""

__version__ = "0.1.0"
