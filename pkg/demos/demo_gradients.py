"""Verify every hand-written gradient against central finite differences.

Each loss family exposes analytic gradients; this script perturbs inputs one
coordinate at a time and reports the worst relative disagreement.

Run:  python demos/demo_gradients.py
"""

import numpy as np

from eicue import (
    SegmentMap,
    build_prototypes,
    eig_loss,
    object_masks,
    objnce_loss,
)
from eicue.objnce import scatter_prototype_grad


def fd(fn, x, h=1e-6):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + h
        fp = fn()
        x[i] = orig - h
        fm = fn()
        x[i] = orig
        g[i] = (fp - fm) / (2 * h)
        it.iternext()
    return g


def main():
    rng = np.random.default_rng(0)

    print("clustering loss, gradient in the score matrix:")
    p = rng.standard_normal((8, 4))
    _, grad = eig_loss(p)
    num = fd(lambda: eig_loss(p)[0], p)
    rel = np.max(np.abs(grad - num) / np.maximum(np.abs(num), 1e-8))
    print(f"  max relative error {rel:.2e}")

    print("prototype contrast, total gradient in the feature rows:")
    labels = np.array([0, 0, 0, 1, 1, 1, 2, 2, 2])
    masks = object_masks(SegmentMap(3, 3, labels))
    z = rng.standard_normal((9, 5))
    w = rng.uniform(0.5, 1.5, size=9)

    def loss():
        protos = build_prototypes(z, masks)
        v, _, _ = objnce_loss(z, z, masks, protos, w, tau=0.5)
        return v

    protos = build_prototypes(z, masks)
    _, dz, dphi = objnce_loss(z, z, masks, protos, w, tau=0.5)
    analytic = dz + scatter_prototype_grad(protos, dphi, 9, 5)
    num = fd(loss, z)
    rel = np.max(np.abs(analytic - num) / np.maximum(np.abs(num), 1e-8))
    print(f"  max relative error {rel:.2e}")
    print("\nthe full suite (heads, distillation, all routes) runs in tests/")


if __name__ == "__main__":
    main()
