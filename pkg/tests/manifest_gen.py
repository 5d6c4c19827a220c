"""Randomized manifest construction shared by sampling tests.

Manifests are built so that the resampling quota never exceeds a minor-class
video's offset-window capacity (the precondition of the imbalance bound):
the minor class and quota are drawn first, then the major class total is
derived from them.
"""
import numpy as np

from painvid.core import DatasetManifest, Phase, VideoRecord


def random_manifest(rng: np.random.Generator) -> DatasetManifest:
    m_minor = int(rng.integers(1, 6))
    minor_tens = [int(rng.integers(3, 13)) for _ in range(m_minor)]
    quota = int(rng.integers(0, min(minor_tens)))  # <= min capacity (t - 1)
    remainder = int(rng.integers(0, m_minor))
    major_total = sum(minor_tens) + quota * m_minor + remainder

    major_tens = []
    left = major_total
    while left > 0:
        piece = int(min(left, rng.integers(1, 21)))
        major_tens.append(piece)
        left -= piece

    pain_minor = bool(rng.integers(0, 2))
    pain_tens = minor_tens if pain_minor else major_tens
    nopain_tens = major_tens if pain_minor else minor_tens

    records = []
    for i, t in enumerate(pain_tens):
        records.append(
            VideoRecord(f"p{i}", f"sp{i % 4}", "D", Phase.POST_INDUCTION, 1.0,
                        f"p{i}", 10 * t, 2.0)
        )
    for i, t in enumerate(nopain_tens):
        records.append(
            VideoRecord(f"n{i}", f"sn{i % 4}", "D", Phase.BASELINE, 0.0,
                        f"n{i}", 10 * t, 2.0)
        )
    return DatasetManifest(records=tuple(records), domain_id="D")
