"""Smoke test for the obsbundle extension module.

Builds the extension with cargo, loads it from a temporary directory and
exercises each exported entry point once.
"""

import json
import math
import pathlib
import shutil
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_module(tmp):
    subprocess.run(
        ["cargo", "build", "--release", "-p", "obsbundle-python", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    lib = ROOT / "target" / "release" / "libobsbundle.so"
    shutil.copy(lib, tmp / "obsbundle.so")
    sys.path.insert(0, str(tmp))
    import obsbundle

    return obsbundle


def main():
    with tempfile.TemporaryDirectory() as d:
        tmp = pathlib.Path(d)
        ob = load_module(tmp)

        osc = ob.System.oscillator()
        assert osc.dims == (1, 1)
        assert not osc.has_constraint
        b = osc.bracket_matrix()
        assert b[0][1] == 1.0 and b[1][0] == -1.0

        traj = osc.integrate({"h0": 0.01, "t_final": 1.0, "adapt": False})
        assert len(traj) == 101
        assert traj.times[-1] == 1.0
        assert len(traj.diagnostics) == 100
        json.loads(traj.to_json())

        circle = ob.System.from_config(json.loads((ROOT / "configs" / "circle.json").read_text()))
        run = circle.integrate()
        assert run.max_abs_phi <= 1e-10, run.max_abs_phi
        assert circle.classify(samples=100)["classification"] == "first_class"

        toda = ob.System.toda()
        assert toda.classify(samples=100)["classification"] == "second_class"
        assert toda.validate()["c1_max_uncertainty"] == 0.1

        study = ob.System.from_config({"system": {"builtin": "circle_constraint"},
                                       "constraint": {"mode": "equality", "first_class_hint": True,
                                                      "alpha_dissipation": 0.0},
                                       "integrator": {"h0": 0.02, "t_final": 2.0, "adapt": False}})
        order = study.convergence(levels=3)["phi"]["fitted"]
        assert 1.7 <= order <= 2.3, order

        lax = ob.lax_report({"params": {"n": 4}, "t_final": 2.0, "dt": 1e-3})
        assert lax["report"]["flaschka"]["max_drift"] <= 1e-6
        assert math.isclose(lax["report"]["epsilon_crit"], 2.0)

        eig = ob.symmetric_spectrum([[2.0, 1.0], [1.0, 2.0]])
        assert all(math.isclose(a, b) for a, b in zip(eig, [1.0, 3.0])), eig

        cfg = {"system": {"builtin": "oscillator"}, "integrator": {"h0": 0.01, "t_final": 0.5}}
        csv = tmp / "t.csv"
        summary = ob.simulate(cfg, trajectory=str(csv))
        assert summary["config_digest"] == ob.config_digest(cfg)
        assert csv.read_text().startswith("# config_digest=" + summary["config_digest"])

        try:
            ob.System.from_config({"system": {"builtin": "pendulum"}})
        except ValueError as e:
            assert "config" in str(e)
        else:
            raise AssertionError("unknown system accepted")

        try:
            osc.integrate({"h0": 0.01, "h_min": 0.005, "tol_geo": 1e-15})
        except ob.BundleError as e:
            assert "aborted" in str(e)
        else:
            raise AssertionError("impossible tolerance accepted")

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
