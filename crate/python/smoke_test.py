"""Smoke test for the rfspin_py extension.

Build with `cargo build --release -p rfspin-python --features extension-module`,
then run with the directory holding `rfspin_py.so` on PYTHONPATH.
"""

import math
import os
import sys

sys.path.insert(0, os.environ.get("RFSPIN_PY_DIR", os.path.dirname(__file__)))

import rfspin_py as rf


def main():
    cert = rf.select_parameters(0.1, 100.0, 3)
    assert cert["q0"] > 0 and cert["delta0"] > 0, cert

    assert rf.Params.certified(0.1, 100.0, 3).beta() > 0

    p = rf.Params(3, 0.01, 40.0)
    assert abs(p.beta() - 7.1206) < 1e-3, p.beta()
    assert p.interaction_range() >= 1

    # resolvent of a single site is 1/(c + 2d)
    g = rf.resolvent([3], [1], 0.5)
    assert abs(g[0][0] - 1.0 / 2.5) < 1e-12, g

    sigma = [1] * 27
    sigma[13] = -1
    support = rf.extract_contour([3, 3, 3], sigma, 1)
    assert 13 in support
    assert rf.extract_contour([3, 3, 3], [1] * 27, 1) == []

    eta = rf.sample_disorder([4, 4], 0.5, 7)
    assert len(eta) == 16 and all(abs(x) <= 0.5 for x in eta)
    assert rf.sample_disorder([4, 4], 0.0, 7) == [0.0] * 16

    q = rf.Params(1, 0.05, 2.0, a=1.0, b=0.0, delta=0.0, window=0.5)
    w = rf.image_log_weights(q, [2], [0.0, 0.0], 2.0)
    assert len(w) == 4 and all(math.isfinite(x) for x in w)

    signs = rf.coarse_grain(q, [2.0, -2.0], 1)
    assert all(s in (1, -1) for s in signs)

    out = rf.run_check("product_identity", 0, True)
    assert out["passed"], out
    assert "ordering_probe" in rf.CHECK_NAMES
    print("python smoke test ok")


if __name__ == "__main__":
    main()
