"""Smoke test for the fhn_meso extension.

Build with `cargo build --release -p fhn-py` and put the library on the path
as `fhn_meso.so` (see the README), or install with `maturin develop`.
"""

import json
import math

import fhn_meso as fm


def main():
    p = fm.FhnParams(a=0.25, tau=0.1, gamma=0.5)
    assert p.nonlinearity(1.0) == 0.0
    k = p.constants()
    assert set(k) == {"kappa1", "kappa1_prime", "kappa2", "kappa3"}

    kern = fm.KernelSpec("gaussian", 1.0, 1)
    assert abs(kern.diffusivity() - kern.sigma) < 1e-15

    cfg = json.loads(fm.default_config())
    cfg["meso"].update({"n_particles": 400, "T": 0.2})
    cfg["macro"].update({"T": 0.2, "cells": 64})
    text = json.dumps(cfg)

    ens = fm.Ensemble.sample(text, seed=1)
    assert len(ens) == 400
    assert abs(sum(ens.masses) - 1.0) < 1e-12
    records = ens.run(0.2, 0.01)
    assert len(records) == 21
    assert all(r["d1"] >= 0.0 for r in records)
    assert ens.symmetrization_gap(2) < 1e-10

    sol = fm.macro_solve(text)
    assert len(sol["v"]) == 64 and not any(m["flagged"] for m in sol["monitors"])

    rep = fm.check_identities(seed=1, trials=5)
    assert rep["passed"], rep

    fit = fm.fit_rate([(e, e**2) for e in (0.4, 0.2, 0.1)])
    assert math.isclose(fit["slope"], 2.0, abs_tol=1e-12)

    try:
        fm.FhnParams(a=2.0)
    except ValueError:
        pass
    else:
        raise AssertionError("a = 2 accepted")

    print(f"fhn_meso {fm.__version__}: smoke test passed ({ens.backend}, {len(records)} records)")


if __name__ == "__main__":
    main()
