"""Drone rotor detection from event-camera streams by harmonic comb fingerprints.

Each pixel's events in a short window are turned into a power spectrum with
a non-uniform DFT. Pixels whose spectra are tonal and carry a strong comb
of harmonics are marked as rotor pixels, and connected rotor regions become
detection boxes.
"""

from rotorfp.errors import ContractViolation, FormatError, RotorFPError, ValidationError
from rotorfp.evaluation import (LatencyStats, MatchReport, iou, latency_summary, match_and_score,
                                score_frames)
from rotorfp.events import (DEFAULT_WINDOW_US, EVENT_DTYPE, Event, EventWindow, PixelGroup,
                            SensorGeometry, group_by_pixel, make_events, normalize_timestamps,
                            parse_events, read_events, serialize_events, window_events,
                            write_events)
from rotorfp.fingerprint import (DetectorParams, PixelVerdict, classify_pixel, comb_score,
                                 harmonic_windows, median_baseline, rotor_snr)
from rotorfp.pipeline import Detection, detect_stream, detect_window, render_frame, write_ppm
from rotorfp.segmentation import (Box, extract_boxes, filter_boxes, label_components,
                                  merge_boxes, segment)
from rotorfp.spectral import (ComplexSpectrum, PowerSpectrum, ndft, power_spectrum,
                              spectral_flatness)
from rotorfp.synth import (ClutterSpec, RotorSpec, SceneSpec, gen_rotor_pixel_events, gen_scene,
                           harmonic_power, pulse_train_coefficients)
from rotorfp.tuner import SearchSpace, TrialHistory, evaluate_objective, propose, run_bo

__version__ = "0.1.0"

__all__ = [
    "ContractViolation",
    "FormatError",
    "RotorFPError",
    "ValidationError",
    "LatencyStats",
    "MatchReport",
    "iou",
    "latency_summary",
    "match_and_score",
    "score_frames",
    "DEFAULT_WINDOW_US",
    "EVENT_DTYPE",
    "Event",
    "EventWindow",
    "PixelGroup",
    "SensorGeometry",
    "group_by_pixel",
    "make_events",
    "normalize_timestamps",
    "parse_events",
    "read_events",
    "serialize_events",
    "window_events",
    "write_events",
    "DetectorParams",
    "PixelVerdict",
    "classify_pixel",
    "comb_score",
    "harmonic_windows",
    "median_baseline",
    "rotor_snr",
    "Detection",
    "detect_stream",
    "detect_window",
    "render_frame",
    "write_ppm",
    "Box",
    "extract_boxes",
    "filter_boxes",
    "label_components",
    "merge_boxes",
    "segment",
    "ComplexSpectrum",
    "PowerSpectrum",
    "ndft",
    "power_spectrum",
    "spectral_flatness",
    "ClutterSpec",
    "RotorSpec",
    "SceneSpec",
    "gen_rotor_pixel_events",
    "gen_scene",
    "harmonic_power",
    "pulse_train_coefficients",
    "SearchSpace",
    "TrialHistory",
    "evaluate_objective",
    "propose",
    "run_bo",
]
