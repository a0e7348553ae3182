"""Desk- and full-scale parameter presets."""
from __future__ import annotations

from .waveform import RadarParams


FULL_CARRIER = 10e9
# full-scale CPI length L*T = 10 ms, desk 32 * 32 us
DESK_CARRIER = FULL_CARRIER * (100 * 1e-4) / (32 * 32e-6)


def desk_params(num_pulses: int = 32) -> RadarParams:
    """B = 10 MHz, T_b = 6.4 us, T = 32 us: T_b B = 64.

    The IF 29B/16 makes the lowest bandpass sampling rate exactly 2 B_cs for
    B_cs = B/8 (and 1.115 * 2 B_cs for B/4). The carrier only sets the
    clutter Doppler spread; it is chosen so the spread measured in Doppler
    bins (spread * L * T) equals that of the full-scale preset.
    """
    B = 10e6
    return RadarParams(carrier_freq=DESK_CARRIER, if_freq=29 * B / 16, bandwidth=B,
                       pulse_width=6.4e-6, pri=32e-6, num_pulses=num_pulses)


DESK_DELAY_SPAN = (0.0, 25.6e-6)


def full_params() -> RadarParams:
    B = 200e6
    return RadarParams(carrier_freq=FULL_CARRIER, if_freq=29 * B / 16, bandwidth=B,
                       pulse_width=1e-5, pri=1e-4, num_pulses=100)


# 1500 m .. 3466.5 m
FULL_DELAY_SPAN = (1e-5, 2.311e-5)
