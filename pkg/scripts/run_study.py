"""Simulation study: fit r = 1, 2, 3 on simulated curves and report test-set recovery."""

import argparse
import time

from supfpca.sim import StudyConfig, run_study


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-train", type=int, default=2000)
    ap.add_argument("--n-test", type=int, default=1000)
    ap.add_argument("--m-tilde", type=int, default=51)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--repetitions", type=int, default=1)
    ap.add_argument("--out", default="study_out")
    args = ap.parse_args()
    cfg = StudyConfig(n_train=args.n_train, n_test=args.n_test, m_tilde=args.m_tilde, seed=args.seed,
                      repetitions=args.repetitions)
    start = time.perf_counter()
    report = run_study(cfg, args.out)
    print(report.text, end="")
    print(report.files["study.csv"], end="")
    print(f"elapsed {time.perf_counter() - start:.1f}s; files in {args.out}/")


if __name__ == "__main__":
    main()
