"""Seeded synthetic amplitude samples and rest/action/release trials."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .models import LgmParams, ScaleMixtureParams
from .recording import SampleSeries, TrialMetadata


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_lgm(p: LgmParams, n, seed=None, return_labels=False):
    """Draw ``n`` amplitudes from a Laplacian-Gaussian mixture.

    A uniform draw picks the component (Laplacian with probability ``lambda1``),
    the Laplacian is sampled by inverting its CDF and the Gaussian with the
    generator's standard normal. With ``return_labels`` the boolean array of
    Laplacian memberships is returned as well.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = _rng(seed)
    is_laplace = rng.random(n) < p.lambda1
    u = rng.random(n) - 0.5
    b = p.sigma1 / math.sqrt(2.0)
    lap = p.mu1 - b * np.sign(u) * np.log1p(-2.0 * np.abs(u))
    gauss = p.mu2 + p.sigma2 * rng.standard_normal(n)
    out = np.where(is_laplace, lap, gauss)
    if return_labels:
        return out, is_laplace
    return out


def sample_sm(p: ScaleMixtureParams, n, seed=None):
    """Draw from the Student-t scale mixture via a gamma-distributed precision."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = _rng(seed)
    # precision tau ~ Gamma(nu/2, rate nu/2) <=> variance scale^2/tau is inverse-gamma
    tau = rng.gamma(0.5 * p.nu, 2.0 / p.nu, size=n)
    return p.mu + p.scale * rng.standard_normal(n) / np.sqrt(tau)


@dataclass(frozen=True)
class TrialProfile:
    rest_s: float = 10.0
    action_s: float = 5.0
    release_s: float = 3.0
    rest_sigma: float = 0.01
    action_model: object = field(default_factory=lambda: LgmParams(0.7, 0.0, 0.05, 0.0, 0.15))
    rate: float = 2000.0
    seed: int = 0

    def __post_init__(self):
        if min(self.rest_s, self.action_s, self.release_s) <= 0:
            raise ValueError("phase durations must be positive")
        if self.rate <= 0:
            raise ValueError("rate must be positive")
        if self.rest_sigma < 0:
            raise ValueError("rest_sigma must be non-negative")


def _draw_action(model, n, rng, with_labels):
    if isinstance(model, LgmParams):
        return sample_lgm(model, n, rng, return_labels=with_labels)
    if isinstance(model, ScaleMixtureParams):
        return sample_sm(model, n, rng), None
    raise TypeError(f"unsupported action model {type(model).__name__}")


def make_trial(profile: TrialProfile, metadata: TrialMetadata | None = None, with_labels=False):
    """Build one rest/action/release recording.

    Rest and release are Gaussian noise at ``rest_sigma``; the action phase is
    drawn from ``profile.action_model``. Phase boundaries land on exact sample
    indices (durations times rate, rounded) and are stored as ground truth in
    ``series.annotations``.
    """
    rng = np.random.default_rng(profile.seed)
    n_rest = int(round(profile.rest_s * profile.rate))
    n_action = int(round(profile.action_s * profile.rate))
    n_release = int(round(profile.release_s * profile.rate))
    rest = profile.rest_sigma * rng.standard_normal(n_rest)
    drawn = _draw_action(profile.action_model, n_action, rng, with_labels)
    action, labels = drawn if isinstance(drawn, tuple) else (drawn, None)
    release = profile.rest_sigma * rng.standard_normal(n_release)
    samples = np.concatenate([rest, action, release])
    annotations = {
        "action_start_index": n_rest,
        "action_end_index": n_rest + n_action,
        "seed": profile.seed,
        "model": type(profile.action_model).__name__,
    }
    for key, value in profile.action_model.to_dict().items():
        annotations[f"model.{key}"] = value
    meta = metadata if metadata is not None else TrialMetadata()
    series = SampleSeries(samples, profile.rate, meta.muscle, meta, annotations)
    if with_labels:
        return series, labels
    return series


# -- graded protocol grid -----------------------------------------------------

# sigma_L (mV) of BB at zero load and its growth per kg, by training experience
_BB_BASE = {"novice": 0.020, "intermediate": 0.022, "trained": 0.024}
_BB_SLOPE_ISOTONIC = {"novice": 0.004, "intermediate": 0.006, "trained": 0.008}
_BB_SLOPE_ISOMETRIC = 0.005
# BB/FCU ratio of Laplacian standard deviations, weight independent
GAMMA_BY_EXPERIENCE = {"novice": 1.2, "intermediate": 1.6, "trained": 2.0}
GAUSS_TO_LAPLACE = 2.5
PROTOCOL_REST_SIGMA = 0.002


def derived_seed(seed, meta: TrialMetadata):
    """Stable per-trial seed from the run seed and the trial's identity."""
    ss = np.random.SeedSequence(
        [
            int(seed),
            meta.subject_id,
            int(round(meta.weight_kg * 100)),
            list(type(meta.activity)).index(meta.activity),
            list(type(meta.muscle)).index(meta.muscle),
            meta.trial_index,
        ]
    )
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def protocol_action_model(meta: TrialMetadata, subject_factor=1.0):
    """Ground-truth LGM for one trial of the graded synthetic protocol.

    sigma_L grows linearly with the lifted weight; for isotonic work the slope
    rises with experience, for isometric work it does not. FCU takes the BB
    value divided by an experience-dependent ratio, and lambda_L grows with load.
    """
    exp = meta.experience.value
    slope = _BB_SLOPE_ISOTONIC[exp] if meta.activity.value == "isotonic" else _BB_SLOPE_ISOMETRIC
    sigma_bb = subject_factor * (_BB_BASE[exp] + slope * meta.weight_kg)
    sigma_l = sigma_bb if meta.muscle.value == "BB" else sigma_bb / GAMMA_BY_EXPERIENCE[exp]
    lam = min(0.6 + 0.02 * meta.weight_kg, 0.85)
    return LgmParams(lam, 0.0, sigma_l, 0.0, GAUSS_TO_LAPLACE * sigma_l)


def protocol_grid(
    seed=0,
    subjects_per_group=1,
    weights=(0.0, 1.0, 2.5, 5.0, 6.0, 9.0, 10.0),
    activities=("isotonic", "isometric"),
    muscles=("BB", "FCU"),
    trials=1,
    rate=2000.0,
    durations=(10.0, 5.0, 3.0),
):
    """Yield ``(metadata, profile)`` for every trial of a graded synthetic study."""
    subject_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EED]))
    subject = 0
    for exp in ("novice", "intermediate", "trained"):
        for _ in range(subjects_per_group):
            subject += 1
            factor = float(1.0 + 0.05 * subject_rng.uniform(-1.0, 1.0))
            for activity in activities:
                for muscle in muscles:
                    for w in weights:
                        for t in range(1, trials + 1):
                            meta = TrialMetadata(subject, exp, w, activity, muscle, t)
                            profile = TrialProfile(
                                *durations,
                                rest_sigma=PROTOCOL_REST_SIGMA,
                                action_model=protocol_action_model(meta, factor),
                                rate=rate,
                                seed=derived_seed(seed, meta),
                            )
                            yield meta, profile


def trial_filename(meta: TrialMetadata):
    w = fmt_weight(meta.weight_kg)
    return (
        f"s{meta.subject_id:02d}_{meta.experience.value}_{meta.activity.value}_"
        f"{meta.muscle.value}_w{w}_t{meta.trial_index}.csv"
    )


def fmt_weight(w):
    return format(float(w), "g").replace(".", "p")
