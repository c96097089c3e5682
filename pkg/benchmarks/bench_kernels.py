"""Compare the compiled kernels against the pure NumPy fallback.

Run directly:

    python3 benchmarks/bench_kernels.py

The pure path is selected per subprocess via V2S_PURE_PYTHON=1, mirroring the
import-time backend choice, so both columns measure exactly what users get.
"""
import json
import os
import subprocess
import sys
import textwrap

CASES = ["closest", "winding", "energy_grad", "hessians", "splat"]

WORKER = textwrap.dedent("""
    import json, sys, time
    import numpy as np

    from v2sreg import kernels
    from v2sreg import geometry as G

    case = sys.argv[1]
    rng = np.random.default_rng(42)

    surf = G.gen_random_organ(G.GenParams(seed=3))
    tet = G.tetrahedralize(surf, 0.015)
    lo, hi = surf.bbox()
    pts = rng.uniform(lo - 0.02, hi + 0.02, size=(20000, 3))

    def timed(fn, repeats=3):
        best = float("inf")
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t0)
        return best

    if case == "closest":
        idx = kernels.TriangleIndex(surf.vertices, surf.triangles)
        dt = timed(lambda: idx.query(pts))
        n = len(pts)
    elif case == "winding":
        idx = kernels.TriangleIndex(surf.vertices, surf.triangles)
        sub = pts[:2000]
        dt = timed(lambda: idx.winding(sub))
        n = len(sub)
    elif case == "energy_grad":
        from v2sreg.fem import _precompute
        bm, vol = _precompute(tet)
        u = 1e-5 * rng.standard_normal(tet.vertices.shape)
        pos = tet.vertices + u
        dt = timed(lambda: kernels.nh_energy_grad(
            pos, tet.tets, bm, vol, 1000.0, 2000.0))
        n = len(tet.tets)
    elif case == "hessians":
        from v2sreg.fem import _precompute
        bm, vol = _precompute(tet)
        u = 1e-5 * rng.standard_normal(tet.vertices.shape)
        pos = tet.vertices + u
        dt = timed(lambda: kernels.nh_element_hessians(
            pos, tet.tets, bm, vol, 1000.0, 2000.0))
        n = len(tet.tets)
    elif case == "splat":
        u = 0.01 * rng.standard_normal(tet.vertices.shape)
        origin = np.asarray(lo - 0.02)
        dt = timed(lambda: kernels.splat_scatter(
            origin, 0.004, 64, tet.vertices, u, 0.004, 0.012))
        n = len(tet.vertices)
    else:
        raise SystemExit(f"unknown case {case}")

    print(json.dumps({"case": case, "backend": kernels.backend(),
                      "seconds": dt, "n": n}))
""")


def run_case(case: str, pure: bool) -> dict:
    env = dict(os.environ)
    env.pop("V2S_PURE_PYTHON", None)
    if pure:
        env["V2S_PURE_PYTHON"] = "1"
    out = subprocess.run([sys.executable, "-c", WORKER, case],
                         capture_output=True, text=True, env=env, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main() -> int:
    rows = []
    for case in CASES:
        fast = run_case(case, pure=False)
        slow = run_case(case, pure=True)
        if fast["backend"] == slow["backend"]:
            print(f"warning: both runs used the {fast['backend']} backend; "
                  "is the extension built?", file=sys.stderr)
        rows.append((case, fast["n"], fast["seconds"], slow["seconds"]))

    print(f"{'case':<12} {'n':>7} {'compiled':>12} {'pure':>12} {'speedup':>9}")
    for case, n, f, s in rows:
        print(f"{case:<12} {n:>7} {f:>11.4f}s {s:>11.4f}s {s / f:>8.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
