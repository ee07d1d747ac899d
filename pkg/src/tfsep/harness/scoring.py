"""Per-example scoring shared by the training loop and the evaluator.

Separates one example, resynthesizes with the mixture phase, trims one
analysis window at both ends so overlap-add edge taper does not count
against the estimates, aligns to the references by best mean SDR over
permutations, and scores each pair.  The mixture itself is scored against
every reference as the improvement baseline.
"""

from __future__ import annotations

import numpy as np

from .. import bss
from ..dc import best_permutation_align
from ..signal import istft, samples_for_frames


def score_example(model, ex, stft_cfg: dict) -> list[dict]:
    """Returns one result dict per reference source for one example."""
    trim = stft_cfg["window"]
    need = samples_for_frames(stft_cfg["n_frames"], stft_cfg["window"], stft_cfg["hop"])
    est_specs = model.estimate_specs(ex)
    ests = [istft(s, length=need).samples[trim:-trim] for s in est_specs]
    refs = [w[trim:-trim] for w in ex.source_waves]
    mix = np.sum(ex.source_waves, axis=0)[trim:-trim]
    perm = best_permutation_align(ests, refs)
    ref_mat = np.stack(refs)
    rows = []
    for est_idx, ref_idx in enumerate(perm):
        sc = bss.score(ests[est_idx], ref_mat, ref_idx)
        mix_sc = bss.score(mix, ref_mat, ref_idx)
        rows.append({
            "example_id": ex.example_id,
            "ref_index": ref_idx,
            "est_index": est_idx,
            "sdr_db": sc.sdr_db,
            "sir_db": sc.sir_db,
            "sar_db": sc.sar_db,
            "mix_sdr_db": mix_sc.sdr_db,
            "improvement_db": sc.sdr_db - mix_sc.sdr_db,
        })
    return rows
