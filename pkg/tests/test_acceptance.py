"""End-to-end acceptance gate.

One test per shipped guarantee, each printing a [PASS] line with the
measured numbers (run with -s or -rA to see them). The three tests that
need the real MNIST IDX files skip with an explicit reason unless
FEDSMOOTH_DATA_DIR points at a directory containing the four standard
train/test ubyte files; everything else runs unconditionally.
"""

import itertools
import json
import math
import os
import statistics
import time

import numpy as np
import pytest

from fedsmooth.accountant import (
    Mechanism,
    calibrate_noise,
    compose,
    delta_from_clients,
    max_rounds,
    noise_lower_bound,
    rdp_poisson_closed,
    rdp_poisson_numeric,
    rdp_to_dp,
    rdp_uniform_closed,
    rdp_uniform_numeric,
)
from fedsmooth.attack import balanced_attack_set, threshold_auc
from fedsmooth.cli import main as cli_main
from fedsmooth.data import DATA_DIR_ENV, load_mnist, mnist_file, partition_iid
from fedsmooth.engine import FedConfig, run, subsample_mean_variance
from fedsmooth.objectives import LogisticTask, QuadraticTask, accuracy, quad_eval, quad_make
from fedsmooth.smoothing import (
    effective_dims,
    make_operator,
    risk_monte_carlo,
    smooth_apply,
    smoothing_risk,
    spectrum,
)

MNIST_ROOT = os.environ.get(DATA_DIR_ENV)


def _mnist_ready() -> bool:
    if not MNIST_ROOT:
        return False
    try:
        for split in ("train", "test"):
            for kind in ("images", "labels"):
                mnist_file(MNIST_ROOT, split, kind)
    except FileNotFoundError:
        return False
    return True


requires_mnist = pytest.mark.skipif(
    not _mnist_ready(),
    reason=(
        f"MNIST IDX files unavailable: set {DATA_DIR_ENV} to a directory "
        "holding train-images-idx3-ubyte, train-labels-idx1-ubyte, "
        "t10k-images-idx3-ubyte, t10k-labels-idx1-ubyte (gzipped accepted)"
    ),
)


def report(label: str, detail: str) -> None:
    print(f"[PASS] {label}: {detail}")


def dense_operator(sigma: float, d: int) -> np.ndarray:
    A = np.zeros((d, d))
    for i in range(d):
        A[i, i] += 1.0 + 2.0 * sigma
        A[i, (i + 1) % d] -= sigma
        A[i, (i - 1) % d] -= sigma
    return A


def test_fft_solver_matches_dense():
    dims = [2, 3, 5, 7, 8, 12, 16, 17, 31, 32, 33, 48, 64, 65, 96, 100,
            127, 128, 129, 200, 255, 256]
    sigmas = [0.0, 0.5, 1.0, 2.0, 3.0]
    rng = np.random.default_rng(101)
    start = time.monotonic()
    worst = 0.0
    for d in dims:
        for sigma in sigmas:
            v = rng.normal(size=d)
            got = smooth_apply(make_operator(sigma, d), v)
            want = np.linalg.solve(dense_operator(sigma, d), v)
            worst = max(worst, float(np.max(np.abs(got - want))))
    elapsed = time.monotonic() - start
    assert worst < 1e-10
    assert elapsed < 10.0
    report("solver equivalence", f"max abs err {worst:.3e} over "
           f"{len(dims) * len(sigmas)} grids in {elapsed:.2f}s")


def test_risk_formula_matches_monte_carlo():
    rng = np.random.default_rng(42)
    start = time.monotonic()
    worst = 0.0
    for i in range(20):
        d = int(rng.integers(2, 65))
        sigma = float(rng.uniform(0.0, 3.0))
        nu = float(rng.uniform(0.1, 2.0))
        v = rng.normal(size=d) * float(rng.uniform(0.5, 3.0))
        op = make_operator(sigma, d)
        exact = smoothing_risk(op, v, nu).total
        sampled = risk_monte_carlo(op, v, nu, trials=100_000, seed=1000 + i)
        rel = abs(sampled - exact) / exact
        worst = max(worst, rel)
        assert rel <= 0.02, (d, sigma, nu, exact, sampled)
    # sigma = 0: the error is pure noise with energy d * nu^2
    op = make_operator(0.0, 48)
    v = rng.normal(size=48)
    exact = smoothing_risk(op, v, 0.9).total
    assert exact == pytest.approx(48 * 0.81, rel=1e-12)
    sampled = risk_monte_carlo(op, v, 0.9, trials=100_000, seed=77)
    assert abs(sampled - exact) / exact <= 0.02
    elapsed = time.monotonic() - start
    assert elapsed < 60.0
    report("risk identity", f"worst rel err {worst:.4%} over 20 tuples "
           f"+ identity case in {elapsed:.2f}s")


def test_noise_energy_effective_dimensions():
    rng = np.random.default_rng(7)
    worst = 0.0
    for sigma in (0.5, 2.0):
        for nu in (0.7, 1.3):
            d = 32
            op = make_operator(sigma, d)
            d_eff, d_eff_sq = effective_dims(op)
            noise = rng.normal(0.0, nu, size=(100_000, d))
            filtered = smooth_apply(op, noise)
            quad_form = float(np.mean(np.sum(noise * filtered, axis=1)))
            sq_norm = float(np.mean(np.sum(filtered * filtered, axis=1)))
            r1 = abs(quad_form - nu**2 * d_eff) / (nu**2 * d_eff)
            r2 = abs(sq_norm - nu**2 * d_eff_sq) / (nu**2 * d_eff_sq)
            worst = max(worst, r1, r2)
            assert r1 <= 0.02 and r2 <= 0.02, (sigma, nu, r1, r2)
    report("noise energy", f"worst rel err {worst:.4%} at 1e5 draws")


def test_numeric_bound_never_exceeds_closed_form():
    start = time.monotonic()
    checked = {"uniform": 0, "poisson": 0}
    for alpha in range(2, 65):
        for tau in (0.01, 0.05, 0.2):
            for nu in (1.0, 2.0, 4.0, 8.0, 16.0):
                uc = rdp_uniform_closed(alpha, tau, nu)
                if uc is not None:
                    assert rdp_uniform_numeric(alpha, tau, nu) <= uc, (
                        "uniform", alpha, tau, nu)
                    checked["uniform"] += 1
                pc = rdp_poisson_closed(alpha, tau, nu)
                if pc is not None:
                    assert rdp_poisson_numeric(alpha, tau, nu) <= pc, (
                        "poisson", alpha, tau, nu)
                    checked["poisson"] += 1
    elapsed = time.monotonic() - start
    assert checked["uniform"] >= 5 and checked["poisson"] >= 5
    assert elapsed < 30.0
    report("accountant soundness", f"zero violations across "
           f"{checked['uniform']} uniform + {checked['poisson']} poisson "
           f"feasible cells in {elapsed:.2f}s")


def test_calibration_composes_back_under_epsilon():
    rng = np.random.default_rng(11)
    found = 0
    draws = 0
    worst = -math.inf
    while found < 50:
        draws += 1
        assert draws < 20_000, f"only {found} feasible configs found"
        eps = float(rng.uniform(1.0, 30.0))
        delta = float(rng.integers(100, 10_001)) ** -1.1
        tau = float(rng.uniform(0.001, 0.1))
        rounds = int(rng.integers(1, 501))
        clip = float(rng.uniform(0.05, 2.0))
        kind = "uniform" if draws % 2 else "poisson"
        mech = Mechanism(kind, tau, clip, rounds)
        cal = calibrate_noise(mech, eps, delta)
        if not cal.feasible:
            continue
        closed = rdp_uniform_closed if kind == "uniform" else rdp_poisson_closed
        rho = closed(cal.alpha, tau, cal.nu / mech.sensitivity)
        assert rho is not None, (kind, eps, tau, rounds, clip)
        eps_back = rdp_to_dp(cal.alpha, compose(rho, rounds), delta)
        assert eps_back <= eps * (1.0 + 1e-9), (kind, eps, eps_back)
        worst = max(worst, (eps_back - eps) / eps)
        found += 1
    report("calibration round trip", f"50 feasible configs ({draws} sampled), "
           f"worst slack {worst:.2e}")


def test_max_rounds_consistent_with_calibration():
    cases = 0
    for nu1, tau, eps, lam, delta in itertools.product(
        (2.7, 3.0, 4.0, 6.0, 10.0),
        (0.001, 0.005, 0.02),
        (0.5, 2.0, 8.0),
        (0.05, 0.3, 0.7),
        (1e-5, 1e-7),
    ):
        out = max_rounds(nu1, tau, eps, delta, lam)
        if not out.feasible or out.rounds < 1:
            continue
        for clip in (1.0, 0.3):
            mech = Mechanism("uniform", tau, clip, out.rounds)
            cal = noise_lower_bound(mech, eps, delta, lam)
            assert cal.feasible, (nu1, tau, eps, lam, delta, clip)
            assert cal.nu <= nu1 * clip * (1.0 + 1e-6), (
                nu1, tau, eps, lam, delta, clip, cal.nu)
            cases += 1
    assert cases >= 40
    report("round budget consistency", f"{cases} feasible cases, zero violations")


def test_subsample_variance_formula():
    rng = np.random.default_rng(3)
    xs = rng.normal(size=(100, 6)) * 1.7
    grand = xs.mean(axis=0)
    worst = 0.0
    for s in (1, 10, 50):
        expected = subsample_mean_variance(xs, s)
        picks = np.argsort(rng.random((100_000, 100)), axis=1)[:, :s]
        means = xs[picks].mean(axis=1)
        diffs = means - grand
        sampled = float(np.mean(np.sum(diffs * diffs, axis=1)))
        rel = abs(sampled - expected) / expected
        worst = max(worst, rel)
        assert rel <= 0.02, (s, expected, sampled)
    # taking everyone is exactly the grand mean
    assert subsample_mean_variance(xs, 100) == 0.0
    full = xs[np.argsort(rng.random((100, 100)), axis=1)[:, :100]].mean(axis=1)
    assert float(np.max(np.abs(full - grand))) < 1e-12
    report("subsample variance", f"worst rel err {worst:.4%} at 1e5 resamples")


def _quad_final_gap(family, nu: float, sigma: float, seed: int) -> float:
    cfg = FedConfig(
        n_clients=100, tau=1.0, scheme="uniform", rounds=200,
        eta_l=0.5, eta_g=1.0, clip=5.0, nu=nu, sigma=sigma,
        local_steps=5, seed=seed,
    )
    result = run(cfg, QuadraticTask(family), np.zeros(family.dim))
    assert not result.diverged
    return quad_eval(family, result.w_last)[2]


def test_convergence_and_noise_trend():
    start = time.monotonic()
    family = quad_make(n_clients=100, dim=32, mu=0.1, beta=1.0, hetero=0.0, seed=7)
    seeds = (0, 1, 2)

    exact_gap = statistics.median(_quad_final_gap(family, 0.0, 0.0, s) for s in seeds)
    assert exact_gap < 1e-6

    medians = {}
    for nu in (0.0, 0.1, 0.5):
        medians[nu] = statistics.median(
            _quad_final_gap(family, nu, 0.0, s) for s in seeds
        )
    assert medians[0.0] < medians[0.1] < medians[0.5]

    smoothed = statistics.median(_quad_final_gap(family, 0.5, 1.0, s) for s in seeds)
    assert smoothed <= medians[0.5]
    elapsed = time.monotonic() - start
    assert elapsed < 120.0
    report(
        "convergence trend",
        f"nu=0 gap {exact_gap:.2e}; medians {medians[0.0]:.2e} < "
        f"{medians[0.1]:.2e} < {medians[0.5]:.2e}; smoothing "
        f"{smoothed:.2e} <= {medians[0.5]:.2e}; {elapsed:.1f}s",
    )


# -- reference image protocol (needs the real dataset) ------------------------

TABLE_SIGMAS = (0.0, 1.0, 2.0, 3.0)
TABLE_SEEDS = (0, 1, 2)
SPECTRUM_ROUNDS = (1, 15, 30)


@pytest.fixture(scope="module")
def reference_runs():
    """All image-protocol artifacts the gated criteria share.

    1000 clients x 50 samples, tau = 0.05, T = 30, E = 5, b = 10,
    clip 0.3, lr 0.1 decaying by 0.99, uniform subsampling, epsilon = 6
    at delta = 1/1000^1.1. One accuracy per (sigma, seed), spectra from
    the sigma = 0 seed-0 run, plus a deliberately overfit non-private
    model (E = 20, no clipping) for the attack comparison.
    """
    train_X, train_y, test_X, test_y = load_mnist(MNIST_ROOT)
    part = partition_iid(train_X, train_y, n_clients=1000, per_client=50, seed=0)
    task = LogisticTask(list(part.shards), 10)
    dim = train_X.shape[1] * 10

    mech = Mechanism("uniform", 0.05, 0.3, 30)
    cal = calibrate_noise(mech, 6.0, delta_from_clients(1000))
    assert cal.feasible

    def base_cfg(sigma, seed, nu, epochs, clip):
        return FedConfig(
            n_clients=1000, tau=0.05, scheme="uniform", rounds=30,
            eta_l=0.1, eta_g=1.0, clip=clip, nu=nu, sigma=sigma,
            batch_size=10, local_epochs=epochs, lr_decay=0.99,
            weight_decay=4e-5, seed=seed,
        )

    start = time.monotonic()
    acc = {}
    spectra = {}
    dp_model = None
    for sigma in TABLE_SIGMAS:
        for seed in TABLE_SEEDS:
            snaps = {}
            observer = None
            if sigma == 0.0 and seed == 0:
                observer = lambda t, avg: (
                    snaps.__setitem__(t, avg.copy()) if t in SPECTRUM_ROUNDS else None
                )
            result = run(
                base_cfg(sigma, seed, cal.nu, epochs=5, clip=0.3),
                task, np.zeros(dim), observer=observer,
            )
            assert not result.diverged
            acc[(sigma, seed)] = accuracy(result.w_last, test_X, test_y, 10)
            if observer is not None:
                spectra = snaps
                dp_model = result.w_last.copy()
    table_elapsed = time.monotonic() - start

    overfit = run(
        base_cfg(0.0, 0, nu=0.0, epochs=20, clip=math.inf), task, np.zeros(dim)
    )
    assert not overfit.diverged

    member_X = np.concatenate([s.features for s in part.shards])
    member_y = np.concatenate([s.labels for s in part.shards])
    return dict(
        acc=acc,
        spectra=spectra,
        dp_model=dp_model,
        np_model=overfit.w_last.copy(),
        member=(member_X, member_y),
        holdout=(test_X, test_y),
        table_elapsed=table_elapsed,
    )


@requires_mnist
def test_private_accuracy_table_trend(reference_runs):
    acc = reference_runs["acc"]
    means = {
        sigma: 100.0 * statistics.mean(acc[(sigma, s)] for s in TABLE_SEEDS)
        for sigma in TABLE_SIGMAS
    }
    assert abs(means[0.0] - 78.41) <= 4.0, means
    for sigma in (1.0, 2.0, 3.0):
        assert means[sigma] >= means[0.0] + 2.0, means
    assert reference_runs["table_elapsed"] < 900.0
    report(
        "private accuracy table",
        "mean test acc " + ", ".join(
            f"sigma={s:g}: {means[s]:.2f}" for s in TABLE_SIGMAS
        ) + f"; {reference_runs['table_elapsed']:.0f}s for 12 runs",
    )


@requires_mnist
def test_overfit_model_leaks_more_than_private(reference_runs):
    member_X, member_y = reference_runs["member"]
    hold_X, hold_y = reference_runs["holdout"]

    def auc_of(w):
        aset = balanced_attack_set(
            w, 10, member_X, member_y, hold_X, hold_y,
            count=5000, rng=np.random.default_rng(0),
        )
        return threshold_auc(aset.losses, aset.is_member)

    auc_np = auc_of(reference_runs["np_model"])
    auc_dp = auc_of(reference_runs["dp_model"])
    assert auc_np >= auc_dp + 0.02, (auc_np, auc_dp)
    report("membership attack gap",
           f"non-private AUC {auc_np:.4f} vs private AUC {auc_dp:.4f}")


def test_random_scores_are_chance_level():
    rng = np.random.default_rng(123)
    losses = rng.normal(size=10_000)
    members = np.zeros(10_000, dtype=bool)
    members[rng.choice(10_000, size=5_000, replace=False)] = True
    auc = threshold_auc(losses, members)
    assert abs(auc - 0.5) <= 0.02
    report("attack sanity", f"random-score AUC {auc:.4f}")


@requires_mnist
def test_parameter_spectra_decay_with_frequency(reference_runs):
    spectra = reference_runs["spectra"]
    assert sorted(spectra) == list(SPECTRUM_ROUNDS)
    slopes = {}
    for t, vec in spectra.items():
        freqs, mags = spectrum(vec)
        keep = mags > 0
        slope = np.polyfit(np.log(freqs[keep]), np.log(mags[keep]), 1)[0]
        slopes[t] = float(slope)
        assert slope < 0.0, (t, slope)
    report("spectrum decay", "log-log slopes " + ", ".join(
        f"round {t}: {slopes[t]:.3f}" for t in SPECTRUM_ROUNDS))


def test_cli_runs_are_byte_identical(tmp_path):
    cfg = {
        "data": {"dataset": "synthetic", "n_clients": 15, "per_client": 10,
                 "holdout": 30, "dim": 6, "n_classes": 3, "separation": 3.0,
                 "data_seed": 2},
        "fed": {"tau": 0.2, "rounds": 5, "local_epochs": 1, "batch_size": 5,
                "eta_l": 0.2, "eta_g": 1.0, "clip": 0.4, "sigma": 1.0,
                "seed": 3},
        "privacy": {"nu": 0.3},
        "output": {"repeats": 2, "spectrum_rounds": [5]},
    }
    blobs = []
    for tag, workers in (("one", None), ("two", None), ("pool", 4)):
        out_dir = str(tmp_path / tag)
        cfg_path = str(tmp_path / f"{tag}.json")
        with open(cfg_path, "w") as fh:
            json.dump({**cfg, "output": {**cfg["output"], "dir": out_dir}}, fh)
        argv = ["run", "--config", cfg_path]
        if workers:
            argv += ["--workers", str(workers)]
        assert cli_main(argv) == 0
        blobs.append({
            name: open(os.path.join(out_dir, name), "rb").read()
            for name in ("metrics_rep0.csv", "metrics_rep1.csv",
                         "model_rep0.bin", "spectrum_rep1_round5.csv")
        })
    assert blobs[0] == blobs[1] == blobs[2]
    report("determinism", "metrics, model, and spectrum bytes identical "
           "across reruns and a 4-thread pool")
