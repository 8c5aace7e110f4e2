"""Time the gate-window counting kernel: numba JIT vs the numpy fallback.

    python benchmarks/bench_kernels.py --windows 2000000 --repeat 3
"""

import argparse
import time

from qscnot import _kernels
from qscnot.analyzer import AnalyzerSetting
from qscnot.detection import DetectorModel, SourceModel, window_model
from qscnot.gates import TwoQubitState, build_cnot_circuit


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - start)
    return min(times), out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--windows", type=int, default=2_000_000)
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--mode", choices=("exact", "incoherent"), default="exact")
    args = parser.parse_args(argv)

    model = window_model(build_cnot_circuit(), TwoQubitState.basis("DH"), SourceModel(),
                         DetectorModel.sspd(), DetectorModel.apd(), AnalyzerSetting.named("DR"), args.mode)
    tables = model.kernel_tables()
    key = _kernels.stream_key(1, 0)
    n = args.windows

    # compile outside the timed region
    _kernels.count_windows(key, 0, 1000, 1000, tables, "numba")
    results = {}
    for backend in ("numba", "numpy"):
        results[backend] = best_time(lambda: _kernels.count_windows(key, 0, n, n, tables, backend), args.repeat)
    if results["numba"][1] != results["numpy"][1]:
        raise SystemExit("backends disagree: " + repr({k: v[1] for k, v in results.items()}))

    print(f"{n} windows, mode={args.mode}, counts (total, accidental, singles1, singles2) = {results['numba'][1]}")
    for backend, (t, _) in results.items():
        print(f"{backend:>6}: {t:8.3f} s  {n / t / 1e6:8.2f} M windows/s")
    print(f"speed-up: {results['numpy'][0] / results['numba'][0]:.1f}x")


if __name__ == "__main__":
    main()
