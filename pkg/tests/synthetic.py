"""Hand-built scenarios for unit tests."""

import numpy as np

from cachesec.model import Scenario


def cn(rng, shape, scale=1.0):
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def make_scenario(rng, num_bs=2, antennas=2, files=(0, 1), er_antennas=1, lr_scale=1.0,
                  er_scale=0.3, radius_frac=0.2, backhaul=None, er_channel=None, estimate=None):
    """Scenario with unit-noise channels; the error lies inside the ball."""
    N = num_bs * antennas
    K = len(files)
    h = cn(rng, (K, N), lr_scale)
    if estimate is None:
        estimate = cn(rng, (N, er_antennas), er_scale)
    estimate = np.asarray(estimate, dtype=complex).reshape(N, -1)
    radius = radius_frac * np.linalg.norm(estimate)
    if er_channel is None:
        err = cn(rng, estimate.shape)
        n = np.linalg.norm(err)
        err = err * (0.5 * radius / n) if n > 0 else err
        er_channel = estimate + err
    er_channel = np.asarray(er_channel, dtype=complex).reshape(estimate.shape)
    caps = np.zeros(num_bs) if backhaul is None else np.asarray(backhaul, dtype=float)
    return Scenario(requests=tuple((k, int(f)) for k, f in enumerate(files)), lr_channels=h,
                    er_channel=er_channel, er_estimate=estimate,
                    csi_error=er_channel - estimate, uncertainty_radius=float(radius),
                    backhaul_caps=caps, lr_distances=np.full((K, num_bs), 100.0),
                    antennas_per_bs=antennas)
