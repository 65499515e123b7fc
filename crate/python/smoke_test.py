"""Smoke test for the netimpute Python bindings.

Build first:
    cargo build --release -p netimpute-py --features extension-module
then run:
    python3 python/smoke_test.py
"""

import importlib.util
import math
import pathlib
import shutil
import sys
import tempfile


def load():
    try:
        import netimpute_py

        return netimpute_py
    except ImportError:
        pass
    root = pathlib.Path(__file__).resolve().parent.parent
    for profile in ("release", "debug"):
        lib = root / "target" / profile / "libnetimpute_py.so"
        if lib.exists():
            dest = pathlib.Path(tempfile.mkdtemp()) / "netimpute_py.so"
            shutil.copy(lib, dest)
            spec = importlib.util.spec_from_file_location("netimpute_py", dest)
            mod = importlib.util.module_from_spec(spec)
            spec.loader.exec_module(mod)
            return mod
    sys.exit("netimpute_py not built; see the module docstring")


def main():
    ni = load()

    cov, lat = ni.generate_population(60, 3)
    p = ni.probability_matrix(cov, lat, [-0.5, -0.5])
    adj = ni.sample_network(p, 3)
    pn = ni.egocentric_sample(adj, 24, 3)
    assert pn.n_nodes == 60 and len(pn.sampled) == 24
    assert len(pn.missing_pairs()) == 36 * 35 // 2

    d = ni.pseudo_distance(pn)
    assert len(d) == 60 and all(len(r) == 24 for r in d)

    for method in ("X-LTWFE", "X-LTWFE-SP", "X", "LR", "LPCA", "LTWFE", "X-LPCA"):
        out = ni.impute(pn, cov, method=method, seed=1)
        a = out.matrix()
        for i in range(60):
            assert a[i][i] == 0.0
            for j in range(60):
                assert 0.0 <= a[i][j] <= 1.0
                assert a[i][j] == a[j][i]
                if pn.is_observed(i, j) and i != j:
                    assert a[i][j] == adj[i][j]
                    assert not out.is_imputed(i, j)
        again = ni.impute(pn, cov, method=method, seed=1).matrix()
        assert again == a, method

    xltwfe = ni.impute(pn, cov, seed=1)
    assert xltwfe.h_used is not None and xltwfe.h_used <= xltwfe.h_selected

    deg = ni.degree_centrality(adj)
    assert all(abs(deg[i] - sum(adj[i]) / 60) < 1e-12 for i in range(60))
    eig = ni.eigenvector_centrality(adj)
    assert abs(math.sqrt(sum(v * v for v in eig)) - math.sqrt(60)) < 1e-8
    g = ni.row_normalize(adj)
    assert all(abs(sum(r) - 1.0) < 1e-12 or sum(r) == 0.0 for r in g)

    csv = ni.run_experiment("imputation", replications=2, seed=4, n_nodes=40, phi=[0.4], methods=["x", "x-ltwfe"])
    assert csv.splitlines()[0].startswith("experiment,estimator,phi")

    try:
        ni.impute(pn, cov, method="bogus")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown method accepted")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
