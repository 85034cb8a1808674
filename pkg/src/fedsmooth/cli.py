"""Command-line front end.

Subcommands:
  accountant  calibrate noise / invert a noise level / max safe rounds
  run         federated training from a JSON config, artifacts to a directory
  attack      loss-threshold membership inference against a saved model
  spectrum    one-sided DFT magnitudes of a saved model vector

Exit codes: 0 success, 2 invalid flags or config, 3 infeasible privacy
request, 4 training diverged (partial artifacts are kept).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import attack as attack_mod
from . import data as data_mod
from .accountant import (
    Mechanism,
    budget_from_noise,
    calibrate_noise,
    delta_from_clients,
    max_rounds,
)
from .engine import (
    FedConfig,
    RunResult,
    load_model,
    run,
    save_model,
    write_metrics_csv,
)
from .objectives import LogisticTask, accuracy, logistic_loss_grad
from .smoothing import spectrum

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "parse_config",
    "canonical_dict",
    "load_config",
    "main",
    "entrypoint",
]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataSection:
    dataset: str = "synthetic"
    root: str | None = None
    n_clients: int = 20
    per_client: int = 50
    scheme: str = "iid"
    holdout: int = 200
    dim: int = 32
    n_classes: int = 4
    separation: float = 3.0
    data_seed: int = 0


@dataclass(frozen=True)
class FedSection:
    tau: float = 0.2
    subsampling: str = "uniform"
    rounds: int = 10
    local_epochs: int | None = 1
    local_steps: int | None = None
    batch_size: int = 10
    eta_l: float = 0.1
    eta_g: float = 1.0
    lr_decay: float = 1.0
    clip: float | None = 0.3
    sigma: float = 0.0
    weight_decay: float = 0.0
    seed: int = 0
    averaging: str = "last"


@dataclass(frozen=True)
class PrivacySection:
    epsilon: float | None = None
    delta: float | None = None
    nu: float | None = None
    noise_multiplier: float | None = None
    non_private: bool = False


@dataclass(frozen=True)
class OutputSection:
    dir: str = "out"
    repeats: int = 1
    spectrum_rounds: tuple[int, ...] = ()
    workers: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataSection = field(default_factory=DataSection)
    fed: FedSection = field(default_factory=FedSection)
    privacy: PrivacySection = field(default_factory=PrivacySection)
    output: OutputSection = field(default_factory=OutputSection)


_SECTIONS = {
    "data": DataSection,
    "fed": FedSection,
    "privacy": PrivacySection,
    "output": OutputSection,
}


def _build_section(cls, raw: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = dict(raw)
    if cls is OutputSection and "spectrum_rounds" in kwargs:
        kwargs["spectrum_rounds"] = tuple(int(r) for r in kwargs["spectrum_rounds"])
    return cls(**kwargs)


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    sections = {
        name: _build_section(cls, raw.get(name, {})) for name, cls in _SECTIONS.items()
    }
    cfg = ExperimentConfig(**sections)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.data.dataset not in ("synthetic", "mnist"):
        raise ConfigError(f"unknown dataset {cfg.data.dataset!r}")
    if cfg.fed.subsampling not in ("uniform", "poisson"):
        raise ConfigError(f"unknown subsampling {cfg.fed.subsampling!r}")
    if cfg.data.scheme not in ("iid", "label_sorted"):
        raise ConfigError(f"unknown partition scheme {cfg.data.scheme!r}")
    if (cfg.fed.local_epochs is None) == (cfg.fed.local_steps is None):
        raise ConfigError("set exactly one of fed.local_epochs / fed.local_steps")
    p = cfg.privacy
    modes = [
        p.epsilon is not None,
        p.nu is not None,
        p.noise_multiplier is not None,
        p.non_private,
    ]
    if sum(modes) != 1:
        raise ConfigError(
            "set exactly one of privacy.epsilon, privacy.nu, "
            "privacy.noise_multiplier, privacy.non_private"
        )
    if cfg.output.repeats < 1:
        raise ConfigError("output.repeats must be >= 1")
    if cfg.output.workers < 1:
        raise ConfigError("output.workers must be >= 1")


def canonical_dict(cfg: ExperimentConfig) -> dict:
    out = dataclasses.asdict(cfg)
    out["output"]["spectrum_rounds"] = list(cfg.output.spectrum_rounds)
    return out


def load_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(json.load(fh))


def _clip_value(cfg: ExperimentConfig) -> float:
    return math.inf if cfg.fed.clip is None else float(cfg.fed.clip)


def _delta_value(cfg: ExperimentConfig) -> float:
    if cfg.privacy.delta is not None:
        return float(cfg.privacy.delta)
    return delta_from_clients(cfg.data.n_clients)


def _resolve_dataset(cfg: ExperimentConfig):
    """(partition, n_classes) for the configured dataset."""
    d = cfg.data
    if d.dataset == "synthetic":
        n_total = d.n_clients * d.per_client + d.holdout
        X, y = data_mod.synth_classification(
            n_total, d.dim, d.n_classes, d.separation, d.data_seed
        )
        n_classes = d.n_classes
    else:
        X, y, _, _ = data_mod.load_mnist(d.root)
        n_classes = 10
    part = (
        data_mod.partition_iid(X, y, d.n_clients, d.per_client, d.data_seed)
        if d.scheme == "iid"
        else data_mod.partition_label_sorted(X, y, d.n_clients, d.per_client, d.data_seed)
    )
    return part, n_classes


def _resolve_privacy(cfg: ExperimentConfig) -> dict:
    """Noise level plus the reported budget; raises ConfigError on misuse."""
    p = cfg.privacy
    clip = _clip_value(cfg)
    delta = _delta_value(cfg)
    record: dict = {
        "mode": None,
        "nu": None,
        "epsilon": None,
        "delta": delta,
        "lambda_star": None,
        "alpha": None,
        "feasible": True,
    }
    if p.non_private:
        record.update(mode="non_private", nu=0.0, epsilon=None)
        return record
    if not math.isfinite(clip):
        raise ConfigError("private modes need a finite fed.clip")
    mech = Mechanism(
        kind=cfg.fed.subsampling, tau=cfg.fed.tau, clip=clip, rounds=cfg.fed.rounds
    )
    if p.epsilon is not None:
        cal = calibrate_noise(mech, float(p.epsilon), delta)
        record.update(
            mode="epsilon",
            epsilon=float(p.epsilon),
            nu=cal.nu,
            lambda_star=cal.lam,
            alpha=cal.alpha,
            feasible=cal.feasible,
        )
        return record
    nu = float(p.nu) if p.nu is not None else float(p.noise_multiplier) * clip
    if nu <= 0.0:
        raise ConfigError("privacy.nu / noise_multiplier must be positive")
    budget = budget_from_noise(mech, nu, delta)
    record.update(
        mode="nu" if p.nu is not None else "noise_multiplier",
        nu=nu,
        epsilon=budget.epsilon if budget.feasible else None,
        feasible=True,  # a raw noise level is always runnable
    )
    return record


def _json_clean(obj):
    """Strict JSON: non-finite floats become null."""
    if isinstance(obj, dict):
        return {k: _json_clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_clean(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _emit(record: dict, out_path: str | None) -> None:
    text = json.dumps(_json_clean(record), sort_keys=True, indent=2)
    print(text)
    if out_path:
        with open(out_path, "w", newline="\n") as fh:
            fh.write(text + "\n")


# ---------------------------------------------------------------------------
# accountant


def _accountant_record(mech: Mechanism, delta: float) -> dict:
    return {
        "mechanism": mech.kind,
        "epsilon": None,
        "delta": delta,
        "tau": mech.tau,
        "T": mech.rounds,
        "clip": mech.clip,
        "nu": None,
        "lambda_star": None,
        "alpha": None,
        "feasible": False,
    }


def cmd_accountant(args: argparse.Namespace) -> int:
    if args.delta is not None:
        delta = args.delta
    elif args.n is not None:
        delta = float(args.n) ** -float(args.delta_exp)
    else:
        print("accountant: need --delta or --n (with optional --delta-exp)", file=sys.stderr)
        return 2
    mech = Mechanism(kind=args.mech, tau=args.tau, clip=args.clip, rounds=args.rounds)
    rec = _accountant_record(mech, delta)

    if args.action == "calibrate":
        cal = calibrate_noise(mech, args.eps, delta, grid=args.grid)
        rec.update(
            epsilon=args.eps,
            nu=cal.nu if cal.feasible else None,
            lambda_star=cal.lam if cal.feasible else None,
            alpha=cal.alpha if cal.feasible else None,
            feasible=cal.feasible,
        )
        if not cal.feasible:
            rec["reason"] = "no budget split satisfies the side conditions"
    elif args.action == "budget":
        res = budget_from_noise(mech, args.nu, delta, grid=args.grid)
        rec.update(nu=args.nu, epsilon=res.epsilon if res.feasible else None, feasible=res.feasible)
        if not res.feasible:
            rec["reason"] = "noise level outside the achievable range"
    else:  # max-rounds
        res = max_rounds(args.nu1, args.tau, args.eps, delta, args.lam)
        rec.update(
            epsilon=args.eps,
            nu=args.nu1 * args.clip,
            lambda_star=args.lam,
            alpha=math.log(1.0 / delta) / ((1.0 - args.lam) * args.eps) + 1.0,
            T=res.rounds,
            feasible=res.feasible,
        )
        if not res.feasible:
            rec["reason"] = "noise below 8/3 or order condition failed at this lambda"

    _emit(rec, args.out)
    return 0 if rec["feasible"] else 3


# ---------------------------------------------------------------------------
# run


def _apply_overrides(cfg: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    fed = cfg.fed
    priv = cfg.privacy
    out = cfg.output
    if args.rounds is not None:
        fed = dataclasses.replace(fed, rounds=args.rounds)
    if args.seed is not None:
        fed = dataclasses.replace(fed, seed=args.seed)
    if args.sigma is not None:
        fed = dataclasses.replace(fed, sigma=args.sigma)
    if args.epsilon is not None:
        priv = PrivacySection(epsilon=args.epsilon, delta=priv.delta)
    if args.nu is not None:
        priv = PrivacySection(nu=args.nu, delta=priv.delta)
    if args.out_dir is not None:
        out = dataclasses.replace(out, dir=args.out_dir)
    if args.repeats is not None:
        out = dataclasses.replace(out, repeats=args.repeats)
    if args.workers is not None:
        out = dataclasses.replace(out, workers=args.workers)
    cfg = ExperimentConfig(data=cfg.data, fed=fed, privacy=priv, output=out)
    _validate(cfg)
    return cfg


def _fed_config(cfg: ExperimentConfig, nu: float, seed: int) -> FedConfig:
    f = cfg.fed
    return FedConfig(
        n_clients=cfg.data.n_clients,
        tau=f.tau,
        scheme=f.subsampling,
        rounds=f.rounds,
        eta_l=f.eta_l,
        eta_g=f.eta_g,
        clip=_clip_value(cfg),
        nu=nu,
        sigma=f.sigma,
        batch_size=f.batch_size,
        local_epochs=f.local_epochs,
        local_steps=f.local_steps,
        lr_decay=f.lr_decay,
        weight_decay=f.weight_decay,
        seed=seed,
        averaging=f.averaging,
    )


def _final_metrics(result: RunResult) -> dict:
    if not result.metrics:
        return {}
    last = result.metrics[-1]
    return {
        "train_loss": last.train_loss,
        "val_loss": last.val_loss,
        "train_acc": last.train_acc,
        "val_acc": last.val_acc,
    }


def cmd_run(args: argparse.Namespace) -> int:
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        privacy = _resolve_privacy(cfg)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"run: {exc}", file=sys.stderr)
        return 2
    if not privacy["feasible"]:
        _emit({"feasible": False, "privacy": privacy, "reason": "calibration infeasible"}, None)
        return 3

    try:
        part, n_classes = _resolve_dataset(cfg)
    except (FileNotFoundError, data_mod.IdxError) as exc:
        print(f"run: {exc}", file=sys.stderr)
        return 2

    os.makedirs(cfg.output.dir, exist_ok=True)
    task = LogisticTask(list(part.shards), n_classes)
    train_X = np.concatenate([s.features for s in part.shards])
    train_y = np.concatenate([s.labels for s in part.shards])
    val_X, val_y = part.holdout_features, part.holdout_labels
    dim = train_X.shape[1] * n_classes

    def evaluate(w: np.ndarray):
        train_loss, _ = logistic_loss_grad(w, train_X, train_y, n_classes)
        val_loss, _ = logistic_loss_grad(w, val_X, val_y, n_classes)
        return (
            train_loss,
            val_loss,
            accuracy(w, train_X, train_y, n_classes),
            accuracy(w, val_X, val_y, n_classes),
        )

    repeats = []
    any_diverged = False
    for r in range(cfg.output.repeats):
        snaps: dict[int, np.ndarray] = {}
        wanted = set(cfg.output.spectrum_rounds)

        def observer(round_1based: int, fed_avg: np.ndarray) -> None:
            if round_1based in wanted:
                snaps[round_1based] = fed_avg.copy()

        fed_cfg = _fed_config(cfg, privacy["nu"], cfg.fed.seed + r)
        result = run(
            fed_cfg,
            task,
            np.zeros(dim),
            evaluate=evaluate,
            observer=observer if wanted else None,
            workers=cfg.output.workers,
        )
        write_metrics_csv(
            os.path.join(cfg.output.dir, f"metrics_rep{r}.csv"), result.metrics
        )
        save_model(os.path.join(cfg.output.dir, f"model_rep{r}.bin"), result.w_avg)
        for rnd, vec in sorted(snaps.items()):
            _write_spectrum(
                os.path.join(cfg.output.dir, f"spectrum_rep{r}_round{rnd}.csv"), vec
            )
        any_diverged = any_diverged or result.diverged
        repeats.append({"final": _final_metrics(result), "diverged": result.diverged})

    finals = [r["final"].get("val_acc", math.nan) for r in repeats]
    summary = {
        "config": canonical_dict(cfg),
        "privacy": privacy,
        "repeats": repeats,
        "aggregate": {
            "final_val_acc_mean": float(np.mean(finals)),
            "final_val_acc_std": float(np.std(finals)),
        },
        "diverged": any_diverged,
    }
    with open(os.path.join(cfg.output.dir, "summary.json"), "w", newline="\n") as fh:
        fh.write(json.dumps(_json_clean(summary), sort_keys=True, indent=2) + "\n")
    return 4 if any_diverged else 0


def _write_spectrum(path: str, vec: np.ndarray) -> None:
    freq, mag = spectrum(vec)
    lines = ["freq,magnitude"]
    lines += [f"{int(f)},{repr(float(m))}" for f, m in zip(freq, mag)]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# attack


def cmd_attack(args: argparse.Namespace) -> int:
    try:
        cfg = load_config(args.config)
        part, n_classes = _resolve_dataset(cfg)
        w = load_model(args.model)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError, ValueError,
            data_mod.IdxError) as exc:
        print(f"attack: {exc}", file=sys.stderr)
        return 2
    member_X = np.concatenate([s.features for s in part.shards])
    member_y = np.concatenate([s.labels for s in part.shards])
    if w.size != n_classes * member_X.shape[1]:
        print(
            f"attack: model has {w.size} weights, dataset needs "
            f"{n_classes} x {member_X.shape[1]}",
            file=sys.stderr,
        )
        return 2
    rng = np.random.default_rng(args.attack_seed)
    aset = attack_mod.balanced_attack_set(
        w,
        n_classes,
        member_X,
        member_y,
        part.holdout_features,
        part.holdout_labels,
        args.count,
        rng,
    )
    auc = attack_mod.threshold_auc(aset.losses, aset.is_member)
    n_members = int(aset.is_member.sum())
    if args.roc_out:
        fpr, tpr = attack_mod.roc_points(aset.losses, aset.is_member)
        lines = ["fpr,tpr"] + [f"{repr(float(a))},{repr(float(b))}" for a, b in zip(fpr, tpr)]
        with open(args.roc_out, "w", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    _emit(
        {
            "auc": auc,
            "n_members": n_members,
            "n_nonmembers": int(aset.is_member.size - n_members),
        },
        args.out,
    )
    return 0


def cmd_spectrum(args: argparse.Namespace) -> int:
    try:
        vec = load_model(args.model)
    except (FileNotFoundError, ValueError) as exc:
        print(f"spectrum: {exc}", file=sys.stderr)
        return 2
    _write_spectrum(args.out, vec)
    return 0


# ---------------------------------------------------------------------------
# parser


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedsmooth", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    acc = sub.add_parser("accountant", help="privacy accounting")
    acc.add_argument("action", choices=["calibrate", "budget", "max-rounds"])
    acc.add_argument("--mech", choices=["uniform", "poisson"], required=True)
    acc.add_argument("--eps", type=float, default=1.0)
    acc.add_argument("--delta", type=float)
    acc.add_argument("--n", type=int, help="client count, used when --delta is absent")
    acc.add_argument("--delta-exp", type=float, default=1.1)
    acc.add_argument("--tau", type=float, required=True)
    acc.add_argument("--rounds", type=int, default=1)
    acc.add_argument("--clip", type=float, default=1.0)
    acc.add_argument("--nu", type=float, default=1.0, help="raw noise std (budget action)")
    acc.add_argument("--nu1", type=float, default=4.0, help="noise in clip units (max-rounds)")
    acc.add_argument("--lam", type=float, default=0.5, help="budget split (max-rounds)")
    acc.add_argument("--grid", type=int, default=999)
    acc.add_argument("--out", help="also write the JSON record here")
    acc.set_defaults(fn=cmd_accountant)

    runp = sub.add_parser("run", help="federated training")
    runp.add_argument("--config", required=True)
    runp.add_argument("--out-dir")
    runp.add_argument("--rounds", type=int)
    runp.add_argument("--repeats", type=int)
    runp.add_argument("--seed", type=int)
    runp.add_argument("--nu", type=float)
    runp.add_argument("--epsilon", type=float)
    runp.add_argument("--sigma", type=float)
    runp.add_argument("--workers", type=int)
    runp.set_defaults(fn=cmd_run)

    att = sub.add_parser("attack", help="membership inference")
    att.add_argument("--config", required=True, help="the run's experiment config")
    att.add_argument("--model", required=True)
    att.add_argument("--count", type=int, default=5000, help="samples per side")
    att.add_argument("--attack-seed", type=int, default=0)
    att.add_argument("--roc-out")
    att.add_argument("--out")
    att.set_defaults(fn=cmd_attack)

    spec = sub.add_parser("spectrum", help="DFT magnitudes of a model file")
    spec.add_argument("--model", required=True)
    spec.add_argument("--out", required=True)
    spec.set_defaults(fn=cmd_spectrum)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except AssertionError as exc:
        print(f"fedsmooth: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
