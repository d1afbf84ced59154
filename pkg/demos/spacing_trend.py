"""How tree spacing affects segmentation when canopies start to touch.

    python3 demos/spacing_trend.py [--seeds 2]
"""

import argparse

import numpy as np

from orchardgraph import AnalysisConfig, OrchardSpec, analyze, generate_orchard


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=2)
    args = ap.parse_args()

    config = AnalysisConfig(detect=False)
    print("spacing   v-measure")
    for spacing in (3.0, 4.0, 5.0, 6.0, 8.0):
        scores = []
        for seed in range(args.seeds):
            o = generate_orchard(OrchardSpec(rows=2, per_row=3, tree_spacing=spacing, row_spacing=spacing,
                                             seed=seed))
            scores.append(analyze(o.cloud, config, trunks=o.trunks).metrics["v_measure"])
        print(f"{spacing:5.1f} m   {np.mean(scores):9.3f}")


if __name__ == "__main__":
    main()
