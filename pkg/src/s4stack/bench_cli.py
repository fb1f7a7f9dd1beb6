"""Benchmark and verification harness (``s4bench``).

Subcommands:

``verify``        invariant suites for the core modules against dense oracles
``bench-kernel``  fast kernel vs the Krylov oracle, across sizes
``bench-step``    DPLR recurrence step vs the dense step
``diagnose``      exact-integer growth reports

Exit status is 0 on success, 1 when ``verify`` finds an error above the
tolerance, and 2 on usage errors or refused (over-budget) runs.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import statistics
import sys
import time
import tracemalloc
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import cauchy, diagnostics
from .discretize import (bilinear_discretize_dense, dplr_discrete_to_dense, dplr_discretize,
                         dplr_discretize_reference, run_recurrence)
from .hippo import HippoFamily, hippo_dplr, hippo_matrix, nplr_decompose
from .kernel import c_tilde_from_c, convolve, krylov_kernel_naive, make_kernel, s4_kernel
from .ssm_core import conjugate, dplr_to_ssm, make_continuous_ssm

CSV_COLUMNS = ("method", "n", "l", "time_ms_median", "time_ms_iqr", "peak_aux_bytes",
               "max_rel_err")
MODES = ("verify", "kernel", "step", "diagnose")
DEFAULT_BUDGET = 2e10  # flop estimate above which oracle runs are refused
VERIFY_DELTAS = (1e-3, 1e-2, 1e-1)


class BudgetExceeded(Exception):
    def __init__(self, method, estimate, budget):
        super().__init__(f"{method} needs about {estimate:.3g} flops, over the budget of "
                         f"{budget:.3g}; lower --n/--l or raise --budget")
        self.estimate = estimate


@dataclass
class BenchConfig:
    mode: str
    n: list = field(default_factory=lambda: [8])
    l: list = field(default_factory=lambda: [64])
    h: int = 1
    family: str = "legs"
    delta: float = 1e-2
    repeats: int = 5
    seed: int = 0
    output_format: str = "table"
    tolerance: float = 1e-8
    budget: float = DEFAULT_BUDGET
    oracle: bool = True
    perturb: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.repeats < 3:
            raise ValueError("repeats must be at least 3")
        if any(int(v) != v or v < 1 for v in list(self.n) + list(self.l)) or self.h < 1:
            raise ValueError("sizes must be positive integers")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.output_format not in ("json", "csv", "table"):
            raise ValueError("format must be json, csv or table")
        HippoFamily.parse(self.family)


@dataclass
class BenchRow:
    method: str
    n: int
    l: int
    time_ms_median: float
    time_ms_iqr: float
    peak_aux_bytes: int
    max_rel_err: float | None = None


@dataclass
class BenchReport:
    config: BenchConfig
    cases: list
    worst: BenchRow | None = None
    passed: bool = True
    growth: list = field(default_factory=list)

    def to_json(self) -> dict:
        out = {"config": asdict(self.config), "cases": [asdict(r) for r in self.cases],
               "passed": self.passed}
        if self.growth:
            out["growth"] = [g.to_dict() for g in self.growth]
        return out


# -- measurement ------------------------------------------------------------------------

def measure(fn, repeats):
    """Median and IQR wall time (ms) of ``fn`` after one discarded warm-up call."""
    fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    q1, _, q3 = statistics.quantiles(times, n=4, method="inclusive")
    return statistics.median(times), q3 - q1


def peak_alloc(fn):
    """Peak bytes traced during ``fn`` beyond what was live when it started.

    numpy reports its data buffers to ``tracemalloc``, so this sees every
    array the call allocates.
    """
    started = not tracemalloc.is_tracing()
    if started:
        tracemalloc.start()
    try:
        base = tracemalloc.get_traced_memory()[0]
        tracemalloc.reset_peak()
        fn()
        return max(0, tracemalloc.get_traced_memory()[1] - base)
    finally:
        if started:
            tracemalloc.stop()


def rel_err(got, want):
    got = np.asarray(got)
    want = np.asarray(want)
    return float(np.max(np.abs(got - want)) / max(np.max(np.abs(want)), 1e-300))


def _krylov_estimate(n, l):
    return 8.0 * n * n * l


def _timed_row(method, n, l, fn, repeats, err=None):
    median, iqr = measure(fn, repeats)
    return BenchRow(method, n, l, median, iqr, peak_alloc(fn), err)


# -- suites -----------------------------------------------------------------------------

def _perturbed(kernel, eps):
    if not eps:
        return kernel
    k = np.array(kernel.k)
    k[len(k) // 2] += eps * max(np.abs(k).max(), 1e-300)
    return make_kernel(k, kernel.delta)


def _verify_cases(config, n, l):
    """Yield ``(suite, error, fn)`` for one (n, l) size."""
    family = HippoFamily.parse(config.family)
    spec = hippo_dplr(family, n, seed=config.seed)
    decomp = nplr_decompose(family, n)
    a = hippo_matrix(family, n)
    rng = np.random.default_rng(config.seed)

    recon = np.linalg.norm(decomp.dense() - a) / np.linalg.norm(a)
    yield "hippo.nplr_reconstruction", recon, lambda: nplr_decompose(family, n)

    ssm = dplr_to_ssm(spec)
    back = conjugate(ssm, decomp.v.conj().T)
    real_b = decomp.v @ spec.b
    yield "ssm_core.change_of_basis", rel_err(back.a, a) + rel_err(back.b, real_b), \
        lambda: conjugate(ssm, decomp.v.conj().T)

    omega = rng.standard_normal(l) + 1j * rng.standard_normal(l)
    nodes = cauchy.make_nodes(omega, spec.lambda_)
    w = rng.standard_normal((n, 2)) + 1j * rng.standard_normal((n, 2))
    fast = cauchy.cauchy_forms(nodes, w, w)
    dense = np.einsum("mj,ja,jb->mab", cauchy.cauchy_matrix(nodes), w.conj(), w)
    yield "cauchy.forms", rel_err(fast, dense), lambda: cauchy.cauchy_forms(nodes, w, w)

    for delta in VERIFY_DELTAS:
        disc = dplr_discretize(spec, delta)
        ref = dplr_discretize_reference(spec, delta)
        err = rel_err(dplr_discrete_to_dense(disc).a_bar, ref.a_bar) + rel_err(disc.b_bar,
                                                                              ref.b_bar)
        yield f"discretize.bilinear[delta={delta:g}]", err, lambda: dplr_discretize(spec, delta)

        real_disc = bilinear_discretize_dense(make_continuous_ssm(a, real_b, decomp.v @ spec.c),
                                              delta)
        oracle = krylov_kernel_naive(real_disc, l)
        ct = c_tilde_from_c(spec, delta, l)

        def fast_kernel(delta=delta, ct=ct):
            return _perturbed(s4_kernel(spec, delta, l, c_tilde=ct), config.perturb)

        yield f"kernel.s4_vs_krylov[delta={delta:g}]", rel_err(fast_kernel().k, oracle.k), \
            fast_kernel

        u = rng.standard_normal(l)
        y_rec, _ = run_recurrence(disc, u)
        y_conv = convolve(fast_kernel(), u)
        yield f"kernel.conv_vs_recurrence[delta={delta:g}]", rel_err(y_conv, y_rec), \
            lambda u=u, disc=disc: run_recurrence(disc, u)


def run_verify(config):
    rows = []
    for n in config.n:
        for l in config.l:
            for method, err, fn in _verify_cases(config, n, l):
                rows.append(_timed_row(method, n, l, fn, config.repeats, float(err)))
    worst = max(rows, key=lambda r: r.max_rel_err)
    ok = bool(np.isfinite(worst.max_rel_err)) and worst.max_rel_err <= config.tolerance
    return BenchReport(config, rows, worst, ok)


def run_kernel_bench(config):
    rows = []
    for n in config.n:
        for l in config.l:
            if config.oracle and _krylov_estimate(n, l) > config.budget:
                raise BudgetExceeded("krylov", _krylov_estimate(n, l), config.budget)
    for n in config.n:
        spec = hippo_dplr(config.family, n, seed=config.seed)
        for l in config.l:
            ct = c_tilde_from_c(spec, config.delta, l)
            k_fast = s4_kernel(spec, config.delta, l, c_tilde=ct)
            err = None
            if config.oracle:
                ref = dplr_discretize_reference(spec, config.delta)
                k_ref = krylov_kernel_naive(ref, l)
                err = rel_err(k_fast.k, k_ref.k)
                rows.append(_timed_row("krylov", n, l, lambda: krylov_kernel_naive(ref, l),
                                       config.repeats, 0.0))
            rows.append(_timed_row("s4_kernel", n, l,
                                   lambda: s4_kernel(spec, config.delta, l, c_tilde=ct),
                                   config.repeats, err))
    return BenchReport(config, rows)


def run_step_bench(config):
    rows = []
    for n in config.n:
        if config.oracle and 2.0 * n * n * config.h > config.budget:
            raise BudgetExceeded("dense_step", 2.0 * n * n * config.h, config.budget)
    for n in config.n:
        spec = hippo_dplr(config.family, n, seed=config.seed)
        disc = dplr_discretize(spec, config.delta)
        rng = np.random.default_rng(config.seed)
        for l in config.l:
            u = rng.standard_normal((config.h, l))
            y_fast, _ = run_recurrence(disc, u)
            err = None
            if config.oracle:
                dense = dplr_discretize_reference(spec, config.delta)
                y_dense, _ = run_recurrence(dense, u)
                err = rel_err(y_fast, y_dense)
                rows.append(_timed_row("dense_step", n, l, lambda: run_recurrence(dense, u),
                                       config.repeats, 0.0))
            rows.append(_timed_row("dplr_step", n, l, lambda: run_recurrence(disc, u),
                                   config.repeats, err))
    return BenchReport(config, rows)


def run_diagnose(config):
    rows = []
    reports = []
    for n in config.n:
        fn = lambda: diagnostics.eigvec_growth(n)  # noqa: E731
        reports.append(fn())
        rows.append(_timed_row("eigvec_growth", n, 0, fn, config.repeats))
        if n >= 2:
            for l in config.l:
                fn = lambda l=l: diagnostics.lssl_charpoly_inverse_coeffs(n, l)  # noqa: E731
                reports.append(fn())
                rows.append(_timed_row("lssl_charpoly_inverse", n, l, fn, config.repeats))
        if n <= diagnostics.MAX_EXACT_N:
            ok = diagnostics.verify_legs_eigenpairs_exact(n)
            rows.append(_timed_row("legs_eigenpairs_exact", n, 0,
                                   lambda: diagnostics.verify_legs_eigenpairs_exact(n),
                                   config.repeats, 0.0 if ok else 1.0))
    return BenchReport(config, rows, passed=all(r.max_rel_err in (None, 0.0) for r in rows),
                       growth=reports)


_RUNNERS = {"verify": run_verify, "kernel": run_kernel_bench, "step": run_step_bench,
            "diagnose": run_diagnose}


def run_bench(config: BenchConfig) -> BenchReport:
    return _RUNNERS[config.mode](config)


# -- rendering --------------------------------------------------------------------------

def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def render(report: BenchReport, fmt) -> str:
    if fmt == "json":
        return json.dumps(report.to_json(), indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in report.cases:
            writer.writerow([_fmt(getattr(row, c)) for c in CSV_COLUMNS])
        return buf.getvalue()
    cells = [CSV_COLUMNS] + [tuple(_fmt(getattr(r, c)) for c in CSV_COLUMNS)
                             for r in report.cases]
    widths = [max(len(row[i]) for row in cells) for i in range(len(CSV_COLUMNS))]
    text = "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip()
                     for row in cells) + "\n"
    if report.growth:
        text += "\n" + diagnostics.render_table(report.growth) + "\n"
    return text


# -- command line -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="s4bench", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--n", type=int, nargs="+", default=[8], help="state size(s)")
    common.add_argument("--l", type=int, nargs="+", default=[64], help="sequence length(s)")
    common.add_argument("--h", type=int, default=1, help="independent input channels")
    common.add_argument("--family", choices=[f.value for f in HippoFamily], default="legs")
    common.add_argument("--delta", type=float, default=1e-2)
    common.add_argument("--repeats", type=int, default=5, help="timed runs (>= 3)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--format", dest="output_format", choices=["json", "csv", "table"],
                        default="table")
    common.add_argument("--out", help="write the report here instead of stdout")
    common.add_argument("--threads", type=int, help="cap BLAS/OpenMP threads")
    common.add_argument("--budget", type=float, default=DEFAULT_BUDGET,
                        help="refuse oracle runs estimated above this many flops")
    common.add_argument("--no-oracle", dest="oracle", action="store_false",
                        help="skip the dense/Krylov reference runs")
    for name, mode, text in (("verify", "verify", "check invariants against dense oracles"),
                             ("bench-kernel", "kernel", "time s4_kernel against Krylov"),
                             ("bench-step", "step", "time DPLR vs dense recurrence steps"),
                             ("diagnose", "diagnose", "exact-integer growth reports")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.set_defaults(mode=mode)
        if mode == "verify":
            p.add_argument("--tolerance", type=float, default=1e-8)
            p.add_argument("--perturb", type=float, default=0.0, metavar="EPS",
                           help="fault injection: add EPS*max|K| to one fast-kernel tap")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    fields = {k: v for k, v in vars(args).items()
              if k in BenchConfig.__dataclass_fields__}
    try:
        config = BenchConfig(**fields)
    except ValueError as err:
        parser.error(str(err))
    limits = threadpool_limits(limits=args.threads) if args.threads else nullcontext()
    try:
        with limits:
            report = run_bench(config)
    except BudgetExceeded as err:
        print(f"s4bench: refused: {err}", file=sys.stderr)
        return 2
    text = render(report, config.output_format)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if not report.passed:
        w = report.worst
        if w is not None:
            print(f"s4bench: FAILED worst case {w.method} n={w.n} l={w.l} "
                  f"max_rel_err={w.max_rel_err:.3e} > tolerance {config.tolerance:g}",
                  file=sys.stderr)
        else:
            print("s4bench: FAILED", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
