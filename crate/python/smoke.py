"""Smoke test for the roverplan_py extension.

Build the module first, e.g. `maturin develop -m crates/py/Cargo.toml`, or
`cargo build --release -p roverplan-py --features extension-module` and copy
target/release/libroverplan_py.so to roverplan_py.so somewhere on PYTHONPATH.
"""

import tempfile

import roverplan_py as rp


def main():
    m = rp.GridMap(["G..", ".#.", "..."])
    assert m.goal == (0, 0)
    assert m.distances()[2][2] == 3  # (1, 1) blocks the diagonal
    # From (1, 0) the goal is straight north.
    assert m.labels()[1][0] == rp.ACTIONS.index("N")
    assert m.to_ascii() == ["G..", ".#.", "..."]

    ds = rp.Dataset.generate(seed=0, count=14, size=16, density=0.2)
    assert len(ds) == 14 and ds.input_shape == (16, 16, 2)
    assert len(ds.train_maps) + len(ds.test_maps) == 14

    expert = ds.evaluate_expert(starts_per_map=4)
    assert expert["acc_test"] == 1.0 and expert["sr_test"] == 1.0

    model = rp.Model.for_dataset("dbcnn", ds, seed=0)
    log = model.fit(ds, epochs=2, lr=0.01)
    assert [r["epoch"] for r in log] == [1, 2]
    assert all(r["loss"] == r["loss"] for r in log)

    q = model.q_values(ds, ds.test_maps[0])
    assert len(q) == 16 and len(q[0]) == 16 and len(q[0][0]) == 8

    mid = ds.test_maps[0]
    free = [(r, c) for r in range(16) for c in range(16) if ds.map(mid).labels()[r][c] is not None]
    before = model.forward_passes
    trajs = model.plan(ds, mid, free[:5])
    assert len(trajs) == 5 and model.forward_passes == before + 1

    metrics = model.evaluate(ds, starts_per_map=4)
    assert 0.0 <= metrics["acc_test"] <= 1.0

    with tempfile.TemporaryDirectory() as tmp:
        model.save(f"{tmp}/m.ckpt")
        again = rp.Model.load(f"{tmp}/m.ckpt")
        assert again.fingerprint == model.fingerprint
        assert again.q_values(ds, mid) == q
        ds.save(f"{tmp}/data")
        assert len(rp.Dataset.load(f"{tmp}/data")) == 14

    try:
        rp.Model("transformer", 16, 16)
    except ValueError:
        pass
    else:
        raise AssertionError("unknown arch accepted")

    print("smoke ok:", metrics)


if __name__ == "__main__":
    main()
