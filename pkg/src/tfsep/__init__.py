"""tfsep: monaural source separation by time-frequency masking.

Core pieces:

  * autodiff / optim   reverse-mode tape and Adam, enough to train the models here
  * signal / wavio     STFT front end, synthetic mixtures, PCM16 wav I/O
  * xdc                mask network whose mask layer is a bank of convolutive templates
  * dc / kmeans        deep-clustering baseline with k-means mask extraction
  * danet              attractor-based masking baseline
  * nmf                NMF and its convolutive extension, multiplicative updates
  * bss                SDR / SIR / SAR scoring
  * harness            dataset generation, training, evaluation, sweeps (CLI: tfsep)
"""

__version__ = "0.1.0"
