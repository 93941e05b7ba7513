"""Smoke test for the castelo extension module.

Build first:

    cargo build --release -p castelo-py --features extension-module

then run `python3 crates/py/python/smoke_test.py` from the repository root.
"""

import glob
import importlib.util
import json
import math
import os
import shutil
import sys
import tempfile

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "..", ".."))


def load_module():
    candidates = sorted(
        glob.glob(os.path.join(ROOT, "target", "*", "libcastelo.so")),
        key=os.path.getmtime,
        reverse=True,
    )
    if not candidates:
        sys.exit("libcastelo.so not found; build castelo-py with --features extension-module")
    staging = tempfile.mkdtemp()
    target = os.path.join(staging, "castelo.so")
    shutil.copy(candidates[0], target)
    spec = importlib.util.spec_from_file_location("castelo", target)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    castelo = load_module()

    assert abs(castelo.cossim([3.0, 1.0], [1.0, 3.0]) - 0.6) < 1e-12
    assert castelo.avgdiff([1.0, 2.0, 3.0], [3.0, 3.0, 3.0]) == -1.0

    _, log10 = castelo.relative_sweetness(-11.7, -6.9)
    assert abs(log10 - 3.38) < 0.02

    df, err = castelo.zwanzig([0.5] * 100)
    assert abs(df - 0.5) < 1e-12 and err >= 0.0

    square = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    shifted = [[x + 2.0, y - 1.0, z] for x, y, z in square]
    _, _, rmsd = castelo.kabsch(shifted, square)
    assert rmsd < 1e-10

    points = [[0.01 * i, 0.0] for i in range(30)] + [[50.0 + 0.01 * i, 0.0] for i in range(30)]
    labels = castelo.hdbscan(points, min_cluster_size=10)
    assert len(set(labels)) == 2 and -1 not in labels

    with tempfile.TemporaryDirectory() as tmp:
        inputs = os.path.join(tmp, "in")
        truth = castelo.synth_system(inputs, seed=1, frames=200)
        planted = [k for k, v in truth.items() if v > 0]
        assert len(planted) == 1

        topo = castelo.Topology.load(os.path.join(inputs, "topology.json"))
        traj = castelo.Trajectory.load(os.path.join(inputs, "trajectory.xyz"), topo)
        assert len(traj) == 200
        groups = castelo.subtype_map(topo)
        assert sorted(i for members in groups.values() for i in members) == topo.ligand_indices
        contacts = castelo.contact_matrix(traj, topo, 0)
        assert len(contacts) == len(topo.ligand_indices)

        config = {
            "contacts": {"delta": 20},
            "ensemble": {"architectures": [{"filters": 8, "latent_dim": 3}]},
            "train": {"max_epochs": 2},
            "hdbscan": {"min_cluster_size": 10},
        }
        result = castelo.run_pipeline(
            json.dumps(config),
            topology=os.path.join(inputs, "topology.json"),
            trajectory=os.path.join(inputs, "trajectory.xyz"),
            workdir=os.path.join(tmp, "work"),
            until="rank",
        )
        assert result["suggestion"] in result["metrics"]
        assert all(math.isfinite(m[0]) for m in result["metrics"].values())

    print("castelo python smoke test passed")


if __name__ == "__main__":
    main()
