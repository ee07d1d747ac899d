"""SDR / SIR / SAR scoring by orthogonal projection onto the references.

The estimate is split into a part aligned with the target reference, a
part explainable by the other references (interference), and a remainder
(artifacts).  Projections are gain-only: no time-shifted reference
filtering, which keeps the decomposition exact and cheap and is the right
model here because masking-based estimates stay time-aligned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DB_CAP = 120.0


@dataclass
class SeparationScore:
    sdr_db: float
    sir_db: float
    sar_db: float


def bss_decompose(est: np.ndarray, refs: np.ndarray, target_index: int
                  ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split est into (s_target, e_interf, e_artif); the three sum to est."""
    est = np.asarray(est, dtype=np.float64)
    refs = np.asarray(refs, dtype=np.float64)
    if refs.ndim != 2:
        raise ValueError(f"refs must be (n_sources, n_samples), got shape {refs.shape}")
    if est.ndim != 1 or est.shape[0] != refs.shape[1]:
        raise ValueError(f"estimate length {est.shape} does not match references {refs.shape}")
    if not 0 <= target_index < refs.shape[0]:
        raise ValueError(f"target index {target_index} out of range for {refs.shape[0]} references")
    target = refs[target_index]
    t_energy = float(target @ target)
    if t_energy == 0.0:
        raise ValueError(f"reference {target_index} is all zero; its SDR is undefined")
    s_target = (float(est @ target) / t_energy) * target
    gram = refs @ refs.T
    try:
        coef = np.linalg.solve(gram, refs @ est)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"references are linearly dependent, projection is not unique: {exc}") from exc
    p_all = coef @ refs
    e_interf = p_all - s_target
    e_artif = est - p_all
    return s_target, e_interf, e_artif


def _ratio_db(num: float, den: float) -> float:
    if num <= 0.0:
        return -DB_CAP
    if den <= 0.0:
        return DB_CAP
    return float(np.clip(10.0 * np.log10(num / den), -DB_CAP, DB_CAP))


def score_decomposition(s_target: np.ndarray, e_interf: np.ndarray,
                        e_artif: np.ndarray) -> SeparationScore:
    et = float(s_target @ s_target)
    ei = float(e_interf @ e_interf)
    ea = float(e_artif @ e_artif)
    return SeparationScore(
        sdr_db=_ratio_db(et, ei + ea),
        sir_db=_ratio_db(et, ei),
        sar_db=_ratio_db(et, ea),
    )


def score(est: np.ndarray, refs: np.ndarray, target_index: int) -> SeparationScore:
    return score_decomposition(*bss_decompose(est, refs, target_index))


def score_all(ests: list[np.ndarray], refs: list[np.ndarray]) -> list[SeparationScore]:
    """Score est[i] against ref[i], with the other refs as interference."""
    if len(ests) != len(refs):
        raise ValueError(f"{len(ests)} estimates vs {len(refs)} references")
    mat = np.stack([np.asarray(r, dtype=np.float64) for r in refs])
    return [score(np.asarray(e, dtype=np.float64), mat, i) for i, e in enumerate(ests)]
