"""Smoke test for the ndforge_py extension module.

Build first (`cargo build -p ndforge-py`), then run:

    python crates/python/python/smoke_test.py [path/to/libndforge_py.so]

Without an argument the library is looked up in target/debug and
target/release.
"""

import importlib.machinery
import importlib.util
import os
import pathlib
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parents[3]


def load(path=None):
    candidates = [pathlib.Path(path)] if path else [
        ROOT / "target" / profile / f"libndforge_py{suffix}"
        for profile in ("debug", "release")
        for suffix in (".so", ".dylib")
    ]
    for lib in candidates:
        if lib.exists():
            loader = importlib.machinery.ExtensionFileLoader("ndforge_py", str(lib))
            spec = importlib.util.spec_from_loader("ndforge_py", loader)
            module = importlib.util.module_from_spec(spec)
            loader.exec_module(module)
            return module
    sys.exit(f"ndforge_py library not found in {[str(c) for c in candidates]}")


def main():
    nd = load(sys.argv[1] if len(sys.argv) > 1 else None)
    ctx = nd.Context()

    img = nd.Image([4, 3], "uint8", "planar")
    img.fill([float(i) for i in range(12)])
    assert img.dims == [4, 3] and img.pixel_type == "uint8" and img.backing == "planar"
    assert ctx.match_op("math.add", img, 5.0) == "math.add.constant-planar"
    assert ctx.match_op("math.add", img, img) == "math.add.elementwise"
    out = ctx.run_op("math.add", img, 250.0)
    assert out.to_list() == [min(255.0, i + 250.0) for i in range(12)]
    assert ctx.run_op("stats.mean", img) == 5.5

    assert ctx.eval("2 + 3 * 4") == 14.0
    assert ctx.eval("a * b", {"a": 6, "b": 7.0}) == 42.0

    with tempfile.TemporaryDirectory() as tmp:
        script = os.path.join(tmp, "greet.sjm")
        with open(script, "w") as f:
            f.write(
                "#@INPUT String name\n#@INPUT int age\n#@OUTPUT String greeting\n"
                'greeting = "Hello, " + name + ". You are " + age + " years old."\n'
            )
        result = ctx.run_module(script, {"name": "World", "age": 7})
        assert result == {"greeting": "Hello, World. You are 7 years old."}, result
        assert ctx.take_output() == "greeting = Hello, World. You are 7 years old.\n"

        pgm = os.path.join(tmp, "a.pgm")
        ctx.save(img, pgm, "pgm")
        back = ctx.open(pgm)
        assert back.same_samples(img)
        code, stdout, stderr = ctx.execute(["info", pgm])
        assert code == 0 and stdout.startswith("format=pgm dims=4x3 type=uint8"), (code, stdout, stderr)

    code, stdout, _ = ctx.execute(["run", "ops.eval", "expr=2+3"])
    assert (code, stdout) == (0, "result = 5\n")

    try:
        ctx.run_op("math.nothing", 1.0)
    except nd.NdforgeError as e:
        assert "math.nothing" in str(e)
    else:
        raise AssertionError("expected NdforgeError")

    assert nd.checksum(b"") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    print("ndforge_py smoke test passed")


if __name__ == "__main__":
    main()
