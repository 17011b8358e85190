"""Tracking and separation of moving sound sources with a small microphone array.

Processing chain: STFT, SRP-PHAT spatial spectrum, wrapped Gaussian mixture
DOA measurements, particle filter tracking, multichannel NMF with
time-varying spatial covariances, Wiener masking and delay-and-sum
beamforming.
"""

__version__ = "0.1.0"
