"""Command-line entry point: ``acwm <subcommand> ...``.

Every command that writes an output directory also writes
``provenance.json`` there: the argument vector (with the output directory
abstracted), resolved configuration, input content hashes and output file
hashes. ``acwm replay`` re-runs a command from that record and compares the
outputs. Failures print one line ``error: <category>: <message>`` to standard
error and exit nonzero.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import checkpoint as ckpt_io
from .autodiff.checkpoint import CheckpointError
from .cohort import CohortError, cohort_stats, directory_digest, read_cohort
from .cohort.synth import SynthConfig, synth_write
from .evaluation import (AurocError, BootstrapError, PROTOCOLS, emit_report, evaluate_protocol,
                         low_data_sweep, parse_action)
from .experiments import DeskSetup, desk_synth
from .objectives import grad_ratio_diagnostic
from .training import (DivergenceError, TrainConfig, TrainError, finetune, linear_probe, load_classifier,
                       load_world_model, pretrain_world_model, train_supervised)

EXIT_CODES = {
    "internal": 1,
    "usage": 2,
    "invalid_config": 3,
    "missing_input": 4,
    "invalid_input": 5,
    "diverged": 6,
    "evaluation": 7,
    "replay_mismatch": 8,
}
OUT_PLACEHOLDER = "{out}"
PROVENANCE = "provenance.json"
VOLATILE = ("runlog.csv", "runlog_epochs.csv")


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


def _progress(quiet: bool):
    if quiet:
        return None
    return lambda msg: print(msg, file=sys.stderr, flush=True)


@contextlib.contextmanager
def _thread_limit():
    """ACWM_THREADS caps BLAS threads; 0 (or 1) runs serially."""
    raw = os.environ.get("ACWM_THREADS")
    if raw is None:
        yield
        return
    try:
        n = int(raw)
    except ValueError:
        raise CliError("invalid_config", f"ACWM_THREADS must be an integer, got {raw!r}") from None
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=max(1, n)):
        yield


@contextlib.contextmanager
def _chdir(path):
    prev = os.getcwd()
    os.chdir(path)
    try:
        yield
    finally:
        os.chdir(prev)


# ---------------------------------------------------------------------------
# inputs and outputs


def _load_cohort(path) -> tuple:
    p = Path(path)
    if not p.exists():
        raise CliError("missing_input", f"cohort directory {p} does not exist")
    try:
        return read_cohort(p), directory_digest(p)
    except CohortError as exc:
        raise CliError("invalid_input", f"cohort {p}: {exc}") from exc


def _load_checkpoint(path):
    p = Path(path)
    if not p.exists():
        raise CliError("missing_input", f"checkpoint {p} does not exist")
    try:
        return ckpt_io.load(p), ckpt_io.file_sha256(p)
    except CheckpointError as exc:
        raise CliError("invalid_input", f"checkpoint {p}: {exc}") from exc


def _train_config(args, objective: str, base: TrainConfig | None = None) -> TrainConfig:
    if args.config:
        p = Path(args.config)
        if not p.exists():
            raise CliError("missing_input", f"config {p} does not exist")
        try:
            cfg = TrainConfig.from_json(p)
        except (ValueError, TypeError, json.JSONDecodeError) as exc:
            raise CliError("invalid_config", f"{p}: {exc}") from exc
    else:
        cfg = base or TrainConfig(objective=objective)
    over = {"objective": objective, "seed": args.seed}
    for flag, name in (("epochs", "epochs"), ("batch_size", "batch_size"), ("lr", "max_lr"),
                       ("lam", "lam"), ("data_fraction", "data_fraction"), ("regularizer", "regularizer"),
                       ("grad_clip", "grad_clip")):
        v = getattr(args, flag, None)
        if v is not None:
            over[name] = v
    try:
        return replace(cfg, **over)
    except (ValueError, TypeError) as exc:
        raise CliError("invalid_config", str(exc)) from exc


def _model_for_cohort(cfg: TrainConfig, cohort) -> TrainConfig:
    m = cfg.model
    if m.in_channels != cohort.channels or m.num_classes != cohort.n_classes:
        try:
            m = replace(m, in_channels=cohort.channels, num_classes=cohort.n_classes)
        except ValueError as exc:
            raise CliError("invalid_config", str(exc)) from exc
        cfg = replace(cfg, model=m)
    if cohort.samples < cfg.model.min_samples():
        raise CliError("invalid_config", f"records of {cohort.samples} samples are shorter than the encoder "
                                         f"minimum {cfg.model.min_samples()}")
    return cfg


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _abstract_argv(argv: list[str], out: str | None) -> list[str]:
    res = list(argv)
    if out is None:
        return res
    for i, a in enumerate(res):
        if a == "--out" and i + 1 < len(res):
            res[i + 1] = OUT_PLACEHOLDER
        elif a.startswith("--out="):
            res[i] = "--out=" + OUT_PLACEHOLDER
    return res


def _write_provenance(out: Path, argv: list[str], command: str, seed, config: dict,
                      inputs: dict[str, tuple[str, str]]) -> dict:
    outputs = {}
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != PROVENANCE:
            outputs[p.relative_to(out).as_posix()] = _sha256(p)
    rec = {
        "tool": "acwm",
        "version": __version__,
        "command": command,
        "argv": _abstract_argv(argv, str(out)),
        "seed": seed,
        "config": config,
        "inputs": {k: {"path": str(Path(p).resolve()), "sha256": h} for k, (p, h) in inputs.items()},
        "outputs": outputs,
        "volatile": [k for k in outputs if Path(k).name in VOLATILE],
        "cwd": os.getcwd(),
        "threads": os.environ.get("ACWM_THREADS"),
    }
    (out / PROVENANCE).write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n")
    return rec


def _save_ckpt(out: Path, ck, command: str, seed, inputs: dict) -> str:
    ck.provenance = {"command": command, "seed": seed,
                     "inputs": {k: h for k, (_, h) in inputs.items()}, "version": __version__}
    return ckpt_io.save(out / "checkpoint.acwm", ck.arrays, ck.config, ck.provenance)


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args, argv):
    if args.config:
        try:
            cfg = SynthConfig(**json.loads(Path(args.config).read_text()))
        except FileNotFoundError:
            raise CliError("missing_input", f"config {args.config} does not exist") from None
        except (TypeError, ValueError) as exc:
            raise CliError("invalid_config", str(exc)) from exc
    else:
        cfg = desk_synth() if args.preset == "desk" else SynthConfig()
    over = {"seed": args.seed}
    for flag in ("patients", "samples", "channels", "classes", "noise"):
        v = getattr(args, flag)
        if v is not None:
            over[{"patients": "n_patients", "classes": "n_classes"}.get(flag, flag)] = v
    try:
        cfg = replace(cfg, **over)
    except (TypeError, ValueError) as exc:
        raise CliError("invalid_config", str(exc)) from exc
    out = _outdir(args)
    synth_write(cfg, out)
    _write_provenance(out, argv, "synth", args.seed, cfg.to_dict(), {})
    print(json.dumps({"out": str(out), "n_patients": cfg.n_patients}))


def cmd_stats(args, argv):
    cohort, digest = _load_cohort(args.cohort)
    st = cohort_stats(cohort)
    if args.out:
        out = _outdir(args)
        st.write(out)
        _write_provenance(out, argv, "stats", None, {}, {"cohort": (args.cohort, digest)})
    print(json.dumps(st.to_dict()))


def _run_training(args, argv, command: str, fn, objective: str, needs_ckpt: bool, base=None):
    cohort, digest = _load_cohort(args.cohort)
    inputs = {"cohort": (args.cohort, digest)}
    cfg = _model_for_cohort(_train_config(args, objective, base), cohort)
    extra = []
    if needs_ckpt:
        enc_ck, h = _load_checkpoint(args.checkpoint)
        inputs["checkpoint"] = (args.checkpoint, h)
        try:
            enc_model = enc_ck.config["model"]
        except (KeyError, TypeError):
            raise CliError("invalid_input", "checkpoint lacks a model config") from None
        cfg = replace(cfg, model=type(cfg.model).from_dict(enc_model))
        extra = [enc_ck]
    try:
        ck, log = fn(cohort, *extra, cfg, progress=_progress(args.quiet))
    except DivergenceError as exc:
        raise CliError("diverged", str(exc)) from exc
    except TrainError as exc:
        raise CliError("invalid_input", str(exc)) from exc
    out = _outdir(args)
    sha = _save_ckpt(out, ck, command, args.seed, inputs)
    log.write(out)
    cfg.to_json(out / "train_config.json")
    _write_provenance(out, argv, command, args.seed, cfg.to_dict(), inputs)
    print(json.dumps({"checkpoint": str(out / "checkpoint.acwm"), "sha256": sha, "steps": len(log.steps)}))


def cmd_pretrain(args, argv):
    _run_training(args, argv, "pretrain", pretrain_world_model, args.objective, False,
                  DeskSetup().pretrain(args.objective, args.seed))


def cmd_train_supervised(args, argv):
    _run_training(args, argv, "train-supervised", train_supervised, "supervised", False,
                  DeskSetup().supervised(args.seed))


def cmd_probe(args, argv):
    _run_training(args, argv, "probe", linear_probe, "supervised", True, DeskSetup().probe(args.seed))


def cmd_finetune(args, argv):
    _run_training(args, argv, "finetune", finetune, "supervised", True, DeskSetup().supervised(args.seed))


def cmd_eval(args, argv):
    cohort, digest = _load_cohort(args.cohort)
    ck, h = _load_checkpoint(args.checkpoint)
    inputs = {"cohort": (args.cohort, digest), "checkpoint": (args.checkpoint, h)}
    results = []
    try:
        for p in args.protocol:
            results.append(evaluate_protocol(ck, cohort, p, args.bootstrap, args.seed, args.level,
                                             method=args.method))
    except (AurocError, BootstrapError) as exc:
        raise CliError("evaluation", str(exc)) from exc
    except (KeyError, ValueError, TrainError) as exc:
        raise CliError("invalid_input", str(exc)) from exc
    config = {"protocols": args.protocol, "bootstrap": args.bootstrap, "level": args.level}
    out = _outdir(args)
    emit_report(results, out, config, {"checkpoint": h})
    _write_provenance(out, argv, "eval", args.seed, config, inputs)
    print(json.dumps([r.to_dict() for r in results]))


def _parse_list(text: str, cast, what: str) -> list:
    try:
        vals = [cast(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise CliError("usage", f"could not parse {what} list {text!r}") from None
    if not vals:
        raise CliError("usage", f"empty {what} list")
    return vals


def cmd_sweep(args, argv):
    train, d1 = _load_cohort(args.train)
    test, d2 = _load_cohort(args.test)
    fractions = _parse_list(args.fractions, float, "fraction")
    seeds = _parse_list(args.seeds, int, "seed")
    setup = DeskSetup()
    pre = _model_for_cohort(setup.pretrain("world_model"), train)
    if args.epochs is not None:
        pre = replace(pre, epochs=args.epochs)
    sup = replace(setup.supervised(), model=pre.model)
    probe = replace(setup.probe(), model=pre.model)
    try:
        results = low_data_sweep(train, test, fractions, args.protocol, seeds, pre, sup, probe,
                                 args.bootstrap, _progress(args.quiet))
    except DivergenceError as exc:
        raise CliError("diverged", str(exc)) from exc
    except (TrainError, ValueError) as exc:
        raise CliError("invalid_input", str(exc)) from exc
    config = {"fractions": fractions, "seeds": seeds, "protocols": args.protocol,
              "pretrain": pre.to_dict(), "supervised": sup.to_dict(), "probe": probe.to_dict()}
    out = _outdir(args)
    emit_report(results, out, config, stem="sweep")
    _write_provenance(out, argv, "sweep", seeds, config, {"train": (args.train, d1), "test": (args.test, d2)})
    print(json.dumps({"rows": len(results), "csv": str(out / "sweep.csv")}))


def cmd_counterfactual(args, argv):
    from .evaluation import counterfactual_apply
    from .training import encode

    cohort, digest = _load_cohort(args.cohort)
    wm_ck, h1 = _load_checkpoint(args.checkpoint)
    pr_ck, h2 = _load_checkpoint(args.probe)
    try:
        wm = load_world_model(wm_ck)
        clf = load_classifier(pr_ck)
    except (TrainError, KeyError, ValueError) as exc:
        raise CliError("invalid_input", str(exc)) from exc
    try:
        a = parse_action(args.action, wm.cfg.num_classes)
    except ValueError as exc:
        raise CliError("usage", str(exc)) from exc
    hits = np.flatnonzero(cohort.record_ids == args.record)
    if len(hits) == 0:
        raise CliError("missing_input", f"record {args.record!r} not found in cohort")
    ref = encode(wm.encoder, cohort.waveforms)
    try:
        res = counterfactual_apply(wm, clf, cohort.waveforms[hits[0]], a, args.k, ref)
        base = counterfactual_apply(wm, clf, cohort.waveforms[hits[0]], np.zeros_like(a), args.k, ref)
    except ValueError as exc:
        raise CliError("invalid_input", str(exc)) from exc
    doc = {
        "record": args.record,
        "action": a.tolist(),
        "h": res.h.tolist(),
        "h_hat": res.h_hat.tolist(),
        "displacement": float(res.displacement),
        "logits": res.logits.tolist(),
        "logits_zero_action": base.logits.tolist(),
        "neighbors": [{"record_id": str(cohort.record_ids[i]), "patient_id": str(cohort.patient_ids[i]),
                       "distance": float(d), "labels": cohort.labels[i].tolist()}
                      for i, d in zip(res.neighbor_index, res.neighbor_dist)],
    }
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.out:
        out = _outdir(args)
        (out / "counterfactual.json").write_text(text + "\n")
        _write_provenance(out, argv, "counterfactual", None, {"action": args.action, "k": args.k},
                          {"cohort": (args.cohort, digest), "checkpoint": (args.checkpoint, h1),
                           "probe": (args.probe, h2)})
    print(text)


def cmd_gradcheck(args, argv):
    from .verify import gradient_suite

    seeds = range(args.seeds)
    rows, elapsed = gradient_suite(seeds, args.tol, progress=_progress(args.quiet))
    worst = {}
    for r in rows:
        worst[r.case] = max(worst.get(r.case, 0.0), r.max_rel_err)
    ok = all(r.passed for r in rows)
    doc = {"passed": ok, "seeds": args.seeds, "tol": args.tol, "elapsed_s": elapsed, "worst": worst}
    if args.out:
        out = _outdir(args)
        (out / "gradcheck.json").write_text(json.dumps({k: v for k, v in doc.items() if k != "elapsed_s"},
                                                       indent=2, sort_keys=True) + "\n")
        _write_provenance(out, argv, "gradcheck", None, {"seeds": args.seeds, "tol": args.tol}, {})
    print(json.dumps(doc))
    if not ok:
        raise CliError("evaluation", "gradient check failed: " + ", ".join(
            f"{k}={v:.2e}" for k, v in worst.items() if v > args.tol))


def cmd_grad_ratio(args, argv):
    from .cohort.pairs import actions, pair_indices
    from .models import WorldModel

    cohort, digest = _load_cohort(args.cohort)
    cfg = _model_for_cohort(_train_config(args, "world_model", DeskSetup().pretrain("world_model", args.seed)), cohort)
    i_t, i_n = pair_indices(cohort)
    if len(i_t) == 0:
        raise CliError("invalid_input", "cohort yields no transition pairs")
    a = actions(cohort, i_t, i_n)
    perm = np.random.default_rng(args.seed).permutation(len(i_t))
    B = cfg.batch_size

    def batches():
        for s in range(0, len(perm), B):
            idx = perm[s:s + B]
            yield cohort.waveforms[i_t[idx]], cohort.waveforms[i_n[idx]], a[idx]

    try:
        rep = grad_ratio_diagnostic(WorldModel(cfg.model, cfg.seed), batches(), args.steps, cfg.loss_cfg(), cfg.seed)
    except ValueError as exc:
        raise CliError("invalid_config", str(exc)) from exc
    out = _outdir(args)
    rep.write_csv(out / "grad_ratio.csv")
    doc = {"lam": rep.lam, "mean_ratio": rep.mean_ratio, "mean_weighted_ratio": rep.mean_weighted_ratio,
           "suggested_lambda": rep.suggested_lambda(), "steps": len(rep.ratios)}
    (out / "grad_ratio.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    _write_provenance(out, argv, "grad-ratio", args.seed, cfg.to_dict(), {"cohort": (args.cohort, digest)})
    print(json.dumps(doc))


def cmd_replay(args, argv):
    p = Path(args.provenance)
    if not p.exists():
        raise CliError("missing_input", f"provenance record {p} does not exist")
    try:
        rec = json.loads(p.read_text())
        old_argv = rec["argv"]
    except (json.JSONDecodeError, KeyError) as exc:
        raise CliError("invalid_input", f"bad provenance record: {exc}") from exc
    for name, inp in rec.get("inputs", {}).items():
        ip = Path(inp["path"])
        if not ip.exists():
            raise CliError("missing_input", f"input {name} ({ip}) no longer exists")
        h = directory_digest(ip) if ip.is_dir() else ckpt_io.file_sha256(ip)
        if h != inp["sha256"]:
            raise CliError("invalid_input", f"input {name} ({ip}) changed since the recorded run")
    out = Path(args.out).resolve()
    new_argv = [str(out) if a == OUT_PLACEHOLDER else a.replace("--out=" + OUT_PLACEHOLDER, f"--out={out}")
                for a in old_argv]
    prev = os.environ.get("ACWM_THREADS")
    os.environ["ACWM_THREADS"] = "0"
    try:
        with _chdir(rec.get("cwd", os.getcwd())), open(os.devnull, "w") as devnull:
            code = main(new_argv, _stdout=devnull)
    finally:
        if prev is None:
            os.environ.pop("ACWM_THREADS", None)
        else:
            os.environ["ACWM_THREADS"] = prev
    if code != 0:
        raise CliError("replay_mismatch", f"replayed command exited with status {code}")
    new = json.loads((out / PROVENANCE).read_text())
    volatile = set(rec.get("volatile", []))
    compared = sorted(k for k in rec["outputs"] if k not in volatile)
    mismatched = [k for k in compared if new["outputs"].get(k) != rec["outputs"][k]]
    missing = sorted(set(rec["outputs"]) - set(new["outputs"]))
    doc = {"identical": not mismatched and not missing, "compared": compared,
           "mismatched": mismatched, "missing": missing}
    print(json.dumps(doc))
    if not doc["identical"]:
        raise CliError("replay_mismatch", f"outputs differ: {mismatched + missing}")


# ---------------------------------------------------------------------------
# parser


def _add_train_flags(sp):
    sp.add_argument("--config", help="TrainConfig JSON; flags below override its fields")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--lr", type=float, help="peak learning rate of the one-cycle schedule")
    sp.add_argument("--data-fraction", type=float, help="train on this fraction of patients")
    sp.add_argument("--grad-clip", type=float, help="global-norm clip threshold (0 = off)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="acwm", description="Action-conditioned latent world models for longitudinal biosignals.")
    ap.add_argument("--version", action="version", version=f"acwm {__version__}")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, fn, help_, out_required=True):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.set_defaults(fn=fn)
        sp.add_argument("--seed", type=int, default=0, help="seed for all randomness (default 0)")
        sp.add_argument("--out", required=out_required, help="output directory")
        sp.add_argument("--quiet", action="store_true", help="suppress progress on stderr")
        return sp

    sp = add("synth", cmd_synth, "generate a synthetic cohort directory")
    sp.add_argument("--patients", type=int)
    sp.add_argument("--samples", type=int)
    sp.add_argument("--channels", type=int)
    sp.add_argument("--classes", type=int)
    sp.add_argument("--noise", type=float)
    sp.add_argument("--preset", choices=["default", "desk"], default="default",
                    help="'desk' uses the short-record generator of the desk experiments")
    sp.add_argument("--config", help="SynthConfig JSON")

    sp = add("stats", cmd_stats, "transition statistics of a cohort", out_required=False)
    sp.add_argument("cohort")

    sp = add("pretrain", cmd_pretrain, "pretrain encoder, projector and predictor on transition pairs")
    sp.add_argument("cohort")
    sp.add_argument("--objective", choices=["world_model", "naive_ssl"], default="world_model")
    sp.add_argument("--lam", type=float, help="regularization weight lambda")
    sp.add_argument("--regularizer", choices=["sigreg", "vicreg"])
    _add_train_flags(sp)

    sp = add("train-supervised", cmd_train_supervised, "end-to-end supervised baseline")
    sp.add_argument("cohort")
    _add_train_flags(sp)

    for name, fn, help_ in (("probe", cmd_probe, "linear probe on a frozen encoder"),
                            ("finetune", cmd_finetune, "finetune an encoder with a fresh head")):
        sp = add(name, fn, help_)
        sp.add_argument("cohort")
        sp.add_argument("--checkpoint", required=True, help="checkpoint holding the encoder")
        _add_train_flags(sp)

    sp = add("eval", cmd_eval, "macro-AUROC with a patient-level bootstrap interval")
    sp.add_argument("cohort")
    sp.add_argument("--checkpoint", required=True, help="checkpoint holding encoder and classifier")
    sp.add_argument("--protocol", choices=PROTOCOLS, action="append",
                    help="triage or monitoring; repeatable (default: both)")
    sp.add_argument("--bootstrap", type=int, default=1000)
    sp.add_argument("--level", type=float, default=0.95)
    sp.add_argument("--method", default="", help="label stored in the report")

    sp = add("sweep", cmd_sweep, "low-data sweep: pretrain+finetune, probe and supervised per fraction")
    sp.add_argument("train")
    sp.add_argument("test")
    sp.add_argument("--fractions", default="0.01,0.1,1.0")
    sp.add_argument("--seeds", default="0")
    sp.add_argument("--protocol", choices=PROTOCOLS, action="append")
    sp.add_argument("--bootstrap", type=int, default=200)
    sp.add_argument("--epochs", type=int, help="pretraining epochs")

    sp = add("counterfactual", cmd_counterfactual, "apply an action to a record's latent", out_required=False)
    sp.add_argument("cohort")
    sp.add_argument("--checkpoint", required=True, help="world-model checkpoint")
    sp.add_argument("--probe", required=True, help="probe checkpoint (classifier)")
    sp.add_argument("--record", required=True)
    sp.add_argument("--action", required=True, help='signed class indices, e.g. "+2,-0"')
    sp.add_argument("--k", type=int, default=5, help="nearest cohort latents to report")

    sp = add("gradcheck", cmd_gradcheck, "finite-difference verification of all gradients", out_required=False)
    sp.add_argument("--seeds", type=int, default=20)
    sp.add_argument("--tol", type=float, default=1e-3)

    sp = add("grad-ratio", cmd_grad_ratio, "prediction/regularization gradient ratio over the first steps")
    sp.add_argument("cohort")
    sp.add_argument("--steps", type=int, default=20)
    sp.add_argument("--lam", type=float)
    _add_train_flags(sp)

    sp = sub.add_parser("replay", help="re-run a command from its provenance record and compare outputs")
    sp.set_defaults(fn=cmd_replay, quiet=True)
    sp.add_argument("provenance")
    sp.add_argument("--out", required=True)
    return ap


def main(argv: list[str] | None = None, _stdout=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    stdout = _stdout or sys.stdout
    try:
        args = build_parser().parse_args(argv)
        if not getattr(args, "fn", None):
            raise CliError("usage", "missing subcommand")
        if getattr(args, "protocol", "unset") is None:
            args.protocol = list(PROTOCOLS)
        with _thread_limit(), contextlib.redirect_stdout(stdout):
            args.fn(args, argv)
        return 0
    except CliError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return EXIT_CODES[exc.category]
    except (CohortError, CheckpointError) as exc:
        print(f"error: invalid_input: {exc}", file=sys.stderr)
        return EXIT_CODES["invalid_input"]
    except Exception as exc:  # noqa: BLE001 - last-resort category for the one-line contract
        print(f"error: internal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CODES["internal"]


if __name__ == "__main__":
    sys.exit(main())
