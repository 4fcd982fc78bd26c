"""Smoke test for the `qdpair` extension module.

Build and run:
    cargo build --release -p qdpair-py --features extension-module
    cp target/release/libqdpair.so python/qdpair.so
    python3 python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import qdpair  # noqa: E402


def main():
    assert f"{qdpair.predicted_fidelity(2.3, 134.0):.3f}" == "0.890"
    assert f"{qdpair.predicted_fidelity(9.8, 134.0):.3f}" == "0.590"
    assert abs(qdpair.fidelity_from_contrasts(0.89, 0.83, -0.78) - 0.875) < 1e-12

    with tempfile.TemporaryDirectory() as d:
        cfg = os.path.join(d, "run.toml")
        with open(cfg, "w") as f:
            f.write(
                "[emitter]\nfss_uev = 2.3\nt1_xx_ps = 112.0\nt1_x_ps = 134.0\n"
                "[detectors]\ndark_rate_cps = [0.0, 0.0]\n"
                "[run]\nduration_s = 0.2\ntopology = \"HBT_XX\"\n"
            )
        out = os.path.join(d, "hbt.qdtt")
        n = qdpair.simulate(cfg, out, seed=1)
        channels, stamps = qdpair.read_qdtt(out)
        assert n == len(stamps) > 0
        start = [t for c, t in zip(channels, stamps) if c == 0]
        stop = [t for c, t in zip(channels, stamps) if c == 1]
        g2, err = qdpair.g2_zero(start, stop)
        assert g2 < 0.1, (g2, err)

    # Noiseless psi+ counts in {H,V,D,R}^2 order.
    kets = {"H": (1, 0), "V": (0, 1), "D": (1 / math.sqrt(2), 1 / math.sqrt(2)), "R": (1 / math.sqrt(2), 1j / math.sqrt(2))}
    counts = []
    for a in "HVDR":
        for b in "HVDR":
            (a0, a1), (b0, b1) = kets[a], kets[b]
            amp = (a0.conjugate() * b0.conjugate() + a1.conjugate() * b1.conjugate()) / math.sqrt(2)
            counts.append(round(1e6 * abs(amp) ** 2))
    t = qdpair.tomography(counts)
    assert abs(t["concurrence"] - 1.0) < 1e-3, t["concurrence"]

    alpha = [i * math.pi / 16 for i in range(16)]
    xx = [0.0] * 16
    x = [1000.0 + 1.15 * math.cos(4 * a) for a in alpha]
    s, s_err, _ = qdpair.fit_fss(alpha, x, xx)
    assert abs(s - 2.3) < 1e-6, s

    assert qdpair.ensemble_yield(seed=0) >= 0.999
    try:
        qdpair.tomography([1] * 15)
    except ValueError:
        pass
    else:
        raise AssertionError("short count vector accepted")
    print("python smoke test: OK")


if __name__ == "__main__":
    main()
