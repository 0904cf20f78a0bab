"""One pixel through the update: a prior and a measurement fuse into a
posterior whose precision is the sum of the input precisions, and an
inconsistent pair is caught by the innovation test.
"""

import numpy as np

from scfusion import CoordStateMap, chi2_quantile, kalman_update


def pixel(mean, var):
    return CoordStateMap.from_variance(np.array(mean, float).reshape(1, 1, 3), [[var]])


def main() -> None:
    prior, meas = pixel((1.00, 2.00, 3.00), 0.03**2), pixel((1.02, 1.99, 3.01), 0.02**2)
    post, diag = kalman_update(prior, meas)
    print("posterior mean ", np.round(post.coords[0, 0], 4))
    print("posterior sigma", round(float(post.sigma[0, 0]), 4), "(inputs 0.03, 0.02)")
    print("gain", round(float(diag.kalman_gain[0, 0]), 3), "NIS", round(float(diag.nis[0, 0]), 3))

    far = pixel((1.5, 2.0, 3.0), 0.02**2)
    _, diag = kalman_update(prior, far)
    print(f"inconsistent pair: NIS {diag.nis[0, 0]:.1f} > {chi2_quantile(3, 0.95):.3f} -> rejected {bool(diag.nis_rejected[0, 0])}")


if __name__ == "__main__":
    main()
