"""Microvascular flow imaging toolkit.

Separates slow, strong tissue echoes from weak blood echoes in complex IQ
frame sequences. The solver decomposes the Casorati matrix into a weighted
low-rank tissue part plus a sparse blood part; an unfolded network makes the
iteration trainable; an SVD band filter serves as the reference method. A
hydraulic flow phantom, Doppler metrics, and a batch pipeline round out the
package.
"""

from . import (casorati, config, formats, irls, metrics, phantom, pipeline,
               svdfilt, unfolded)

__version__ = "0.1.0"

__all__ = ["casorati", "config", "formats", "irls", "metrics", "phantom",
           "pipeline", "svdfilt", "unfolded", "__version__"]
