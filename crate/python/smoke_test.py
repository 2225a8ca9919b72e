"""Smoke test for the colorsail_py extension.

Build and install first:
    pip install maturin
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/colorsail_py-*.whl
"""

import json
import tempfile

import colorsail_py as cs


def two_region(width, height):
    pixels = []
    for y in range(height):
        for x in range(width):
            if x < width // 2:
                pixels.append([0.8 + 0.1 * x / width, 0.1 + 0.2 * y / height, 0.1])
            else:
                pixels.append([0.1, 0.3 + 0.3 * y / height, 0.7 + 0.2 * x / width])
    return pixels


def main():
    identity = cs.Sail([[1, 0, 0], [0, 1, 0], [0, 0, 1]], wind=0.0, subdivision=3)
    colors = identity.colors()
    assert len(colors) == 9
    assert [1.0, 0.0, 0.0] in [list(c) for c in colors]
    assert cs.Sail.from_json(identity.to_json()) == identity
    try:
        identity.with_wind(1.5)
    except ValueError as e:
        print("rejected wind 1.5:", e)
    else:
        raise AssertionError("wind 1.5 accepted")

    solid = [[0.2, 0.6, 0.3]] * 64
    sail, report = cs.fit_pixels(8, 8, solid, subdivision=3)
    assert report["e_l2"] < 1e-3, report
    print("solid fit:", json.dumps(report))

    pixels = two_region(12, 10)
    rig = cs.build_rig(12, 10, pixels, n_alpha=2, epochs=2)
    assert (rig.width, rig.height) == (12, 10)
    assert len(rig.sails) == 2
    assert rig.recolor() == rig.reconstruction()
    edited = rig.recolor(json.dumps([{"sail": 0, "set": {"wind": 0.5}}]))
    assert len(edited) == 12 * 10 * 3
    with tempfile.TemporaryDirectory() as d:
        rig.save(d)
        again = cs.Rig.load(d)
        assert again.recolor() == rig.recolor()
    print("rig:", len(rig.sails), "sails, round trip ok")
    print("smoke test passed")


if __name__ == "__main__":
    main()
