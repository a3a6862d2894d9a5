"""Test-only data builders shared across modules."""

from __future__ import annotations

import numpy as np

from cogen.combmodel import CombExample, padded_top_probs
from cogen.core import TokenDistribution, top_k_project
from cogen.fusion import align_supports
from cogen.rng import Splitmix64


def one_sided_examples(seed: int, count: int, vocab: int = 12, mirrored: bool = False):
    """Supervision where the target always follows the peaked source.

    The small side is a random peaked distribution whose argmax is the
    gold token; the large side is uniform. ``mirrored`` swaps the roles.
    """
    rng = Splitmix64(seed)
    out = []
    for _ in range(count):
        raw = np.array([rng.next_float() for _ in range(vocab)])
        peaked = raw**4
        peaked /= peaked.sum()
        uniform = np.full(vocab, 1.0 / vocab)
        target = int(np.argmax(peaked))
        p_peaked = TokenDistribution.dense(peaked)
        p_uniform = TokenDistribution.dense(uniform)
        p_s, p_l = (p_uniform, p_peaked) if mirrored else (p_peaked, p_uniform)
        out.append(
            CombExample(
                top10_l=padded_top_probs(top_k_project(p_l, 10)),
                top10_s=padded_top_probs(top_k_project(p_s, 10)),
                aligned=align_supports(p_s, p_l),
                target_id=target,
            )
        )
    return out


def random_comb_example(rng: np.random.Generator, vocab: int = 30, k: int = 6) -> CombExample:
    """A random sparse aligned pair with a positive-mass target."""
    ids_s = np.sort(rng.choice(vocab, size=k, replace=False))
    ids_l = np.sort(rng.choice(vocab, size=k, replace=False))
    ps = rng.random(k)
    ps = ps / ps.sum() * rng.uniform(0.6, 1.0)
    pl = rng.random(k)
    pl = pl / pl.sum() * rng.uniform(0.6, 1.0)
    order_s, order_l = np.argsort(-ps), np.argsort(-pl)
    dist_s = TokenDistribution(vocab_size=vocab, sparse_ids=ids_s[order_s], sparse_probs=ps[order_s])
    dist_l = TokenDistribution(vocab_size=vocab, sparse_ids=ids_l[order_l], sparse_probs=pl[order_l])
    pair = align_supports(dist_s, dist_l)
    candidates = np.nonzero(pair.p_s + pair.p_l > 1e-6)[0]
    target = int(pair.support[candidates[rng.integers(len(candidates))]])
    return CombExample(
        top10_l=padded_top_probs(dist_l),
        top10_s=padded_top_probs(dist_s),
        aligned=pair,
        target_id=target,
    )


def perturbed_params(params, rng: np.random.Generator, scale: float = 0.05):
    """Fresh parameters jittered around ``params`` for gradient checking."""
    from cogen.combmodel import CombModelParams

    arrays = [np.array(a) + rng.normal(0, scale, a.shape) for a in params.arrays()]
    return CombModelParams(
        w1=arrays[0], b1=arrays[1], w2=arrays[2], b2=arrays[3], w3=arrays[4], b3=arrays[5],
        seed=params.seed,
    )
