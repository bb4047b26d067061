"""Wall time of the fast and dense likelihoods as the number of points per curve grows."""

import argparse
import timeit

import numpy as np

from supfpca.likelihood import nll_dense, nll_fast, prepare
from supfpca.model import FunctionalSample, ModelParams, make_bases


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="50,100,200,400,800")
    ap.add_argument("--curves", type=int, default=10)
    ap.add_argument("--r", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    bases = make_bases(10, 5, 10, 7, (0.0, 1.0), (0.0, 1.0))
    params = ModelParams(rng.normal(size=50), rng.normal(size=(70, args.r)), np.log(0.5))
    print("m_n,fast_s,dense_s,prepare_s,fast_over_dense")
    for mn in (int(s) for s in args.sizes.split(",")):
        samples = [FunctionalSample(i, np.sort(rng.uniform(0, 1, mn)), rng.normal(size=mn), rng.uniform())
                   for i in range(args.curves)]
        prep = min(timeit.repeat(lambda: prepare(samples, bases), number=1, repeat=3))
        data = prepare(samples, bases)
        fast = min(timeit.repeat(lambda: nll_fast(data, params), number=20, repeat=7)) / 20
        dense = min(timeit.repeat(lambda: nll_dense(data, params), number=2, repeat=5)) / 2
        print(f"{mn},{fast:.3e},{dense:.3e},{prep:.3e},{fast / dense:.3e}")


if __name__ == "__main__":
    main()
