"""Smoke test for the `ngl` extension module.

Build first:
    cargo build --release -p ngl-python --features extension-module
then run:
    python3 python/smoke_test.py [path/to/libngl.so]
"""

import importlib.util
import json
import math
import os
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load_module(lib):
    tmp = tempfile.mkdtemp()
    target = os.path.join(tmp, "ngl.so")
    shutil.copy(lib, target)
    spec = importlib.util.spec_from_file_location("ngl", target)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def main():
    lib = sys.argv[1] if len(sys.argv) > 1 else os.path.join(ROOT, "target", "release", "libngl.so")
    ngl = load_module(lib)

    # flat torus: four eigenfunctions at 4π²
    pairs = ngl.solve_spectrum(5, grid_n=64)
    lams = [p.eigenvalue for p in pairs]
    assert abs(lams[0]) < 1e-6, lams
    for lam in lams[1:]:
        assert abs(lam / (4 * math.pi**2) - 1) < 0.01, lams

    # sin(2πx) has two vertical nodal lines of unit length
    n = 128
    vals = [math.sin(2 * math.pi * i / n) for j in range(n) for i in range(n)]
    f = ngl.GridField.torus(n, vals)
    euclid, _ = f.nodal_length()
    assert abs(euclid - 2.0) < 2e-3, euclid
    est, err = f.crofton("disk", 0.05, 20000, seed=1)
    assert abs(est - 2.0) < max(0.02 * 2.0, 3 * err), (est, err)

    # round trip through the field dump
    with tempfile.TemporaryDirectory() as d:
        p = os.path.join(d, "f.gfd")
        f.save(p)
        assert ngl.GridField.load(p).values() == f.values()

    assert ngl.robertson_constant(3) == 4**3 + 20
    assert ngl.sign_changes([math.cos(3 * 2 * math.pi * k / 256) for k in range(256)]) == 6
    report = json.loads(ngl.psi0_report(0.1))
    assert report["residual"] < 1e-6, report

    cfg = '{"schema":"ngl.experiment/1","k0":0.5}'
    reordered = '{"k0":0.5,"schema":"ngl.experiment/1"}'
    assert ngl.config_hash(cfg) == ngl.config_hash(reordered)
    try:
        ngl.config_hash('{"schema":"ngl.experiment/1","a":0.3}')
    except ValueError:
        pass
    else:
        raise AssertionError("invalid config accepted")

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
