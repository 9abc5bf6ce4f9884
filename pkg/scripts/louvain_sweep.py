"""Louvain recovery of a planted two-bloc media graph as the cross-bloc
retweet probability rises toward the within-bloc one."""

import argparse

import numpy as np
from sklearn.metrics import normalized_mutual_info_score

from polarscope.mediagraph import build_bipartite, louvain, project_media
from polarscope.synth import PlantedMediaSpec, gen_planted_media


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--intra", type=float, default=0.5)
    ap.add_argument("--seeds", type=int, default=5)
    args = ap.parse_args()
    print(f"{'inter':>6} {'NMI mean':>9} {'NMI min':>8} {'communities':>12}")
    for inter in (0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5):
        nmi, ncom = [], []
        for seed in range(args.seeds):
            pm = gen_planted_media(PlantedMediaSpec(intra=args.intra, inter=inter), seed)
            ca = louvain(project_media(build_bipartite(pm.retweets, list(pm.partition))), seed=seed)
            nmi.append(normalized_mutual_info_score([pm.partition[m] for m in ca.membership],
                                                    list(ca.membership.values())))
            ncom.append(ca.n_communities)
        print(f"{inter:>6.2f} {np.mean(nmi):>9.3f} {np.min(nmi):>8.3f} {np.mean(ncom):>12.1f}")


if __name__ == "__main__":
    main()
