"""Smoke test for the edgecode_py extension.

Build the module first, e.g.

    cargo build --release -p edgecode-py --features extension-module
    cp target/release/libedgecode_py.so python/edgecode_py.so

then run `python3 python/smoke_test.py`.
"""

import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import edgecode_py as ec


def close(a, b, tol):
    num = math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))
    den = math.sqrt(sum(y * y for y in b)) or 1.0
    return num / den <= tol


def main():
    g = ec.GeneratorMatrix("mds", 3, 5)
    assert (g.k, g.n, g.scheme) == (3, 5, "mds")
    assert g.decodable([0, 3, 4]) == ([0, 3, 4], [0, 3, 4])
    assert ec.GeneratorMatrix.from_bytes(g.to_bytes()).rows() == g.rows()

    rlnc = ec.GeneratorMatrix.from_rows([[1, 0, 1, 1], [0, 1, 1, 1]])
    assert rlnc.decodable([2, 3]) is None
    assert rlnc.decodable([2, 3, 0]) is not None

    m = [[float(r * 4 + c) for c in range(4)] for r in range(7)]
    x = [1.0, -2.0, 0.5, 3.0]
    dense = [sum(a * b for a, b in zip(row, x)) for row in m]
    assert close(g.coded_matvec(m, x, [1, 2, 4]), dense, 1e-9)

    table = {r["scheme"]: r["total"] for r in ec.scale_table()}
    assert table["mds"] == 9600 and table["rlnc"] == 4800
    assert ec.bandwidth_cost("rlnc", 22, 16)["per_worker"] == 8
    assert ec.monte_carlo_extra_workers("mds", 22, 16, trials=200)["mean_extra"] == 0

    xs, ys = ec.synth_dataset(120, 6, seed=3, model="svm")
    w_local, obj_local = ec.train_local(xs, ys, model="svm", num_iter=25, seed=1)
    run = ec.train_cluster(xs, ys, n=5, k=3, scheme="rlnc", model="svm", num_iter=25, seed=1, stragglers=[0, 4])
    assert close(run["w"], w_local, 1e-6)
    assert len(run["objectives"]) == len(obj_local) == 25
    assert run["total_downloads"] == run["block_responses_relayed"]

    try:
        ec.GeneratorMatrix("mds", 6, 5)
    except ValueError:
        pass
    else:
        raise AssertionError("k > n accepted")
    print("smoke test ok")


if __name__ == "__main__":
    main()
