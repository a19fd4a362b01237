"""Experiment loops behind the command-line tasks.

Every run writes into its output directory:

* ``manifest.json``  canonical config, build id and seed
* ``config.cfg``     the canonical config text (feed it back to reproduce)
* ``metrics.csv``    one row per evaluation event, fixed header per task
* ``report.json``    final summary
* ``checkpoints/``   periodic and last-good checkpoints (training tasks)
* ``*.svg``          charts, when ``plots = true``
"""
import csv
import json
import math
import os
import platform
import subprocess
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import bench as benchmod
from . import plots
from .architectures import (
    EVERY_STEP_OUTPUT,
    LAST_STEP,
    Dropouts,
    NetworkSpec,
    build_network,
    network_forward,
)
from .checkpoint import capture, load_checkpoint, restore, save_checkpoint
from .config import parse_config, to_text
from .diagnostics import (
    LinearRnn,
    memory_report,
    record_gradient_flow,
    rnn_to_indrnn,
    verify_equivalence,
    weight_histogram,
)
from .errors import ConfigError, NotRepresentableError
from .numerics import seed_rng
from .tasks import (
    batch_lm,
    bundled_digits,
    gen_adding_batch,
    lm_batch_count,
    load_corpus,
    load_idx,
    make_permutation,
    order0_entropy_bits,
    pixelize,
    split_validation,
)
from .training import (
    TrainState,
    accuracy,
    bits_per_char,
    cross_entropy_loss,
    finite_difference_check,
    mse_loss,
    plateau_update,
    step_decay_update,
    train_step,
)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2
EXIT_NONFINITE = 3

HEADERS = {
    "adding": ("step", "lr", "train_mse", "eval_mse"),
    "pixels": ("step", "epoch", "lr", "train_loss", "train_acc", "valid_acc", "test_acc"),
    "charlm": ("step", "epoch", "lr", "train_bpc", "valid_bpc", "best_valid_bpc"),
    "gradflow": ("cell", "step", "train_loss", "t0_grad", "tT_grad"),
    "gradcheck": ("trial", "kind", "max_rel_error", "checked", "excluded"),
    "equiv": ("trial", "N", "condition", "deviation"),
    "bench": benchmod.CSV_HEADER,
}

DEFAULT_EMBEDDING = 64
MNIST_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
               "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


def build_id():
    """``git describe`` of the source tree, or the package version outside a checkout."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=10)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    from . import __version__
    return f"v{__version__}"


@dataclass
class RunResult:
    status: int
    report: dict
    out_dir: Path


class RunRecorder:
    """Owns the output directory of one run; all file writes go through here."""

    def __init__(self, cfg, out_dir, resume_step=None):
        self.cfg = cfg
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.header = HEADERS[cfg.task]
        text = to_text(cfg)
        (self.out / "config.cfg").write_text(text, encoding="utf-8")
        manifest = {"task": cfg.task, "seed": cfg.seed, "build": build_id(), "config": text,
                    "python": platform.python_version(), "numpy": np.__version__,
                    "resumed_from_step": resume_step}
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
        self.metrics_path = self.out / "metrics.csv"
        kept = []
        if resume_step is not None and self.metrics_path.exists():
            with open(self.metrics_path, newline="", encoding="utf-8") as fh:
                rows = list(csv.reader(fh))
            if rows and tuple(rows[0]) == self.header:
                kept = [r for r in rows[1:] if int(r[0]) <= resume_step]
        with open(self.metrics_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(self.header)
            w.writerows(kept)
        self.rows = [dict(zip(self.header, r)) for r in kept]

    def row(self, **values):
        missing = set(self.header) - set(values)
        if missing:
            raise KeyError(f"metrics row lacks {sorted(missing)}")
        cells = [_cell(values[k]) for k in self.header]
        with open(self.metrics_path, "a", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerow(cells)
        self.rows.append(dict(zip(self.header, cells)))

    def column(self, name):
        return [float(r[name]) for r in self.rows]

    def report(self, report):
        (self.out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                                              encoding="utf-8")

    def checkpoint_dir(self):
        d = self.out / "checkpoints"
        d.mkdir(exist_ok=True)
        return d


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def _rngs(seed):
    master = seed_rng(seed)
    return {"init": master.spawn(), "data": master.spawn(), "dropout": master.spawn(),
            "eval": master.spawn()}


class Trainer:
    """Shared loop plumbing: resume, periodic checkpoints, lr schedules and the
    abort-on-non-finite path."""

    def __init__(self, cfg, out_dir, spec, resume=None):
        self.cfg = cfg
        self.rngs = _rngs(cfg.seed)
        self.net = build_network(spec, self.rngs["init"])
        self.state = TrainState.create(self.net, cfg.lr, self.rngs["dropout"],
                                       patience=cfg.patience, factor=cfg.plateau_factor)
        self.loop = {}
        self.loop_arrays = {}
        self.cfg_text = to_text(cfg)
        resume_step = None
        if resume is not None:
            ckpt = load_checkpoint(resume)
            saved = parse_config(ckpt.config_text)
            if to_text(saved.replace(out=cfg.out)) != to_text(cfg.replace(out=cfg.out)):
                diff = [k for k in cfg.__dataclass_fields__
                        if k != "out" and getattr(saved, k) != getattr(cfg, k)]
                raise ConfigError(f"checkpoint was written with a different config ({', '.join(diff)})",
                                  diff[0] if diff else None)
            self.loop = restore(ckpt, self.net, self.state, self.rngs)
            self.loop_arrays = {k[5:]: v for k, v in ckpt.arrays.items() if k.startswith("loop/")}
            resume_step = ckpt.step
        self.elapsed_before = self.loop.pop("elapsed_before", 0.0)
        self.rec = RunRecorder(cfg, out_dir, resume_step)
        self.started = time.perf_counter()

    def snapshot(self):
        loop = dict(self.loop, elapsed_before=self.elapsed())
        ck = capture(self.cfg_text, self.net, self.state, self.rngs, loop)
        for k, v in self.loop_arrays.items():
            ck.arrays["loop/" + k] = np.array(v, dtype=np.float64)
        return ck

    def maybe_checkpoint(self):
        every = self.cfg.checkpoint_every
        if every and self.state.step % every == 0:
            d = self.rec.checkpoint_dir()
            ck = self.snapshot()
            save_checkpoint(d / f"step-{self.state.step:08d}.ckpt", ck)
            save_checkpoint(d / "last.ckpt", ck)

    def step(self, X, target, loss_fn, initial_states=None):
        """One optimizer step. On a non-finite loss or gradient the pre-step
        state is written to ``checkpoints/last-good.ckpt`` and the error re-raised."""
        buffers = {k: v.copy() for k, v in self.net.buffers().items()}
        rng_words = {k: r.state for k, r in self.rngs.items()}
        try:
            return train_step(self.net, self.state, X, target, loss_fn, self.rngs["dropout"],
                              self.cfg.weight_decay, initial_states)
        except FloatingPointError:
            for k, v in self.net.buffers().items():
                v[...] = buffers[k]
            for k, r in self.rngs.items():
                r.state = rng_words[k]
            save_checkpoint(self.rec.checkpoint_dir() / "last-good.ckpt", self.snapshot())
            raise

    def after_step(self):
        if self.cfg.schedule == "step":
            step_decay_update(self.state, self.cfg.decay_every, self.cfg.decay_factor)

    def end_iteration(self):
        """Call once the iteration's evaluation and loop bookkeeping are done, so a
        checkpoint captures a state from which the run continues identically."""
        self.maybe_checkpoint()

    def on_eval(self, metric, higher_is_better):
        if self.cfg.schedule == "plateau":
            return plateau_update(self.state, metric, higher_is_better)
        return "kept"

    def elapsed(self):
        return time.perf_counter() - self.started + self.elapsed_before

    def out_of_time(self):
        return self.cfg.time_limit > 0 and self.elapsed() >= self.cfg.time_limit

    def finish(self, report):
        report = dict(report, task=self.cfg.task, seed=self.cfg.seed, steps=self.state.step,
                      final_lr=self.state.lr, elapsed_s=self.elapsed())
        self.rec.report(report)
        if self.cfg.checkpoint_every:
            save_checkpoint(self.rec.checkpoint_dir() / "last.ckpt", self.snapshot())
        return report


def _nonfinite_result(trainer, exc):
    report = trainer.finish({"status": "aborted", "error": str(exc),
                             "last_good": str(trainer.rec.checkpoint_dir() / "last-good.ckpt")})
    return RunResult(EXIT_NONFINITE, report, trainer.rec.out)


def _plot_series(cfg, out, name, series, axes):
    if cfg.plots:
        try:
            plots.emit_svg_line_chart(series, axes, out / name)
        except ConfigError:
            pass


# Adding problem ---------------------------------------------------------------

def run_adding(cfg, out_dir, resume=None):
    spec = cfg.network_spec(input_dim=2, output_dim=1, output_mode=LAST_STEP)
    tr = Trainer(cfg, out_dir, spec, resume)
    data, eval_rng = tr.rngs["data"], tr.rngs["eval"]
    train_losses = tr.loop.pop("pending", [])
    best = tr.loop.get("best_eval_mse", math.inf)
    reached = tr.loop.get("target_reached", False)
    try:
        while tr.state.step < cfg.steps and not reached and not tr.out_of_time():
            b = gen_adding_batch(data, cfg.T, cfg.B)
            lv, _, _ = tr.step(b.X, b.y, mse_loss)
            train_losses.append(lv.loss)
            tr.after_step()
            if tr.state.step % cfg.eval_every == 0:
                eval_mse = float(np.mean([_adding_eval(tr.net, eval_rng, cfg) for _ in range(cfg.eval_batches)]))
                tr.rec.row(step=tr.state.step, lr=tr.state.lr,
                           train_mse=float(np.mean(train_losses)), eval_mse=eval_mse)
                train_losses = []
                tr.on_eval(eval_mse, higher_is_better=False)
                best = min(best, eval_mse)
                reached = not math.isnan(cfg.target) and eval_mse < cfg.target
                tr.loop.update(best_eval_mse=best, target_reached=reached)
            tr.loop["pending"] = list(train_losses)
            tr.end_iteration()
    except FloatingPointError as exc:
        return _nonfinite_result(tr, exc)
    tr.loop.pop("pending", None)
    evals = tr.rec.column("eval_mse")
    steps = tr.rec.column("step")
    _plot_series(cfg, tr.rec.out, "eval_mse.svg",
                 {"eval MSE": (steps, evals), "baseline 0.167": ([steps[0], steps[-1]], [0.167, 0.167])}
                 if evals else {},
                 plots.Axes(title=f"adding problem, T={cfg.T}", xlabel="step", ylabel="MSE", log_y=True))
    report = tr.finish({"status": "ok", "final_eval_mse": evals[-1] if evals else None,
                        "best_eval_mse": best if evals else None, "target_reached": reached,
                        "cell": cfg.cell})
    return RunResult(EXIT_OK, report, tr.rec.out)


def _adding_eval(net, rng, cfg):
    b = gen_adding_batch(rng, cfg.T, cfg.B)
    Y, _ = network_forward(net, b.X, False)
    return mse_loss(Y, b.y).loss


# Pixel classification ---------------------------------------------------------

def load_pixel_data(cfg):
    """(train, test) datasets: full MNIST from ``data_dir`` if present, else the bundled 8x8 set."""
    if cfg.data_dir:
        root = Path(cfg.data_dir)
        paths = []
        for name in MNIST_FILES:
            hits = [root / name, root / (name + ".gz")]
            hit = next((p for p in hits if p.exists()), None)
            if hit is None:
                raise ConfigError(f"{name}[.gz] not found in {root}", "data_dir")
            paths.append(hit)
        return load_idx(paths[0], paths[1]), load_idx(paths[2], paths[3])
    return bundled_digits("train"), bundled_digits("test")


def classify(net, dataset, batch=256):
    correct, loss, n = 0, 0.0, len(dataset)
    for lo in range(0, n, batch):
        idx = np.arange(lo, min(lo + batch, n))
        Y, _ = network_forward(net, pixelize(dataset, idx), False)
        lab = dataset.labels[idx]
        correct += int((np.argmax(Y, axis=1) == lab).sum())
        loss += cross_entropy_loss(Y, lab).loss * idx.size
    return correct / n, loss / n


def run_pixels(cfg, out_dir, resume=None):
    train_full, test = load_pixel_data(cfg)
    split_rng = seed_rng(cfg.seed ^ 0x5EED)
    if cfg.permute:
        perm = make_permutation(split_rng, train_full.seq_len)
        train_full, test = train_full.with_permutation(perm), test.with_permutation(perm)
    if cfg.valid_fraction > 0:
        train, valid = split_validation(train_full, cfg.valid_fraction, split_rng)
    else:
        train, valid = train_full, None
    spec = cfg.network_spec(input_dim=1, output_dim=10, output_mode=LAST_STEP,
                            seq_len_hint=train.seq_len)
    tr = Trainer(cfg, out_dir, spec, resume)
    per_epoch = max(len(train) // cfg.B, 1)
    max_steps = cfg.steps if cfg.steps else math.inf
    if cfg.epochs:
        max_steps = min(max_steps, cfg.epochs * per_epoch)
    L = tr.loop
    L.setdefault("epoch", 0)
    L.setdefault("pos", 0)
    L.setdefault("best_valid", -1.0)
    L.setdefault("test_at_best", None)
    L.setdefault("sum_loss", 0.0)
    L.setdefault("sum_acc", 0.0)
    L.setdefault("count", 0)
    reached = L.get("target_reached", False)
    order = tr.loop_arrays.get("order")
    order = None if order is None else order.astype(np.int64)
    try:
        while tr.state.step < max_steps and not reached and not tr.out_of_time():
            if order is None or L["pos"] + cfg.B > len(order):
                if order is not None:
                    L["epoch"] += 1
                order = make_permutation(tr.rngs["data"], len(train))
                tr.loop_arrays["order"] = order
                L["pos"] = 0
            idx = order[L["pos"]:L["pos"] + cfg.B]
            L["pos"] += cfg.B
            lv, Y, _ = tr.step(pixelize(train, idx), train.labels[idx], cross_entropy_loss)
            L["sum_loss"] += lv.loss
            L["sum_acc"] += accuracy(Y, train.labels[idx])
            L["count"] += 1
            tr.after_step()
            if tr.state.step % cfg.eval_every == 0 or tr.out_of_time() or tr.state.step >= max_steps:
                valid_acc = classify(tr.net, valid)[0] if valid is not None else math.nan
                test_acc = classify(tr.net, test)[0]
                tr.rec.row(step=tr.state.step, epoch=L["epoch"], lr=tr.state.lr,
                           train_loss=L["sum_loss"] / L["count"], train_acc=L["sum_acc"] / L["count"],
                           valid_acc=valid_acc, test_acc=test_acc)
                L.update(sum_loss=0.0, sum_acc=0.0, count=0)
                select = test_acc if valid is None else valid_acc
                tr.on_eval(select, higher_is_better=True)
                if select > L["best_valid"]:
                    L["best_valid"], L["test_at_best"] = select, test_acc
                reached = not math.isnan(cfg.target) and select >= cfg.target
                L["target_reached"] = reached
            tr.end_iteration()
    except FloatingPointError as exc:
        return _nonfinite_result(tr, exc)
    rows = tr.rec.rows
    steps = [float(r["step"]) for r in rows]
    _plot_series(cfg, tr.rec.out, "accuracy.svg",
                 {"valid": (steps, [float(r["valid_acc"]) for r in rows]),
                  "test": (steps, [float(r["test_acc"]) for r in rows])} if rows else {},
                 plots.Axes(title="pixel classification", xlabel="step", ylabel="accuracy"))
    hist = _recurrent_histograms(cfg, tr, spec)
    report = tr.finish({"status": "ok", "final_test_acc": float(rows[-1]["test_acc"]) if rows else None,
                        "best_valid_acc": L["best_valid"], "test_at_best_valid": L["test_at_best"],
                        "target_reached": reached, "epochs": L["epoch"], "seq_len": train.seq_len,
                        "train_size": len(train), "test_size": len(test), "gamma": cfg.gamma,
                        "recurrent_weights": hist})
    return RunResult(EXIT_OK, report, tr.rec.out)


def _recurrent_histograms(cfg, tr, spec):
    out = {}
    for node in tr.net.recurrent_nodes():
        u = getattr(node.layer, "u", None)
        if u is None:
            continue
        counts, edges = weight_histogram(u, 20, (-1.5, 1.5))
        mem = memory_report(u, spec.seq_len_hint, 0.01)
        out[node.name] = {"counts": counts.tolist(), "n_long": mem.n_long, "n_short": mem.n_short,
                          "n_negative": mem.n_negative}
        if cfg.plots:
            plots.emit_svg_histogram(counts, edges, f"recurrent weights, {node.name}",
                                     tr.rec.out / f"hist-{node.name}.svg")
    return out


# Character language model -------------------------------------------------------

def run_charlm(cfg, out_dir, resume=None):
    if not cfg.corpus:
        raise ConfigError("charlm needs a corpus path", "corpus")
    corpus = load_corpus(cfg.corpus, (1 - 2 * cfg.valid_fraction, cfg.valid_fraction, cfg.valid_fraction))
    V = corpus.vocab_size
    cfg_net = cfg if cfg.embedding_dim else cfg.replace(embedding_dim=DEFAULT_EMBEDDING)
    spec = cfg_net.network_spec(input_dim=V, output_dim=V, output_mode=EVERY_STEP_OUTPUT)
    tr = Trainer(cfg, out_dir, spec, resume)
    train_ids, valid_ids = corpus.split("train"), corpus.split("valid")
    per_epoch = lm_batch_count(train_ids.size, cfg.T, cfg.B)
    if per_epoch < 1:
        raise ConfigError("corpus too small for this T and B", "corpus")
    max_steps = cfg.steps if cfg.steps else math.inf
    if cfg.epochs:
        max_steps = min(max_steps, cfg.epochs * per_epoch)
    L = tr.loop
    L.setdefault("epoch", 0)
    L.setdefault("pos", 0)
    L.setdefault("best", math.inf)
    L.setdefault("sum", 0.0)
    L.setdefault("count", 0)
    entropy0 = order0_entropy_bits(valid_ids)
    names = [n.name for n in tr.net.recurrent_nodes()]
    carried = {n: tr.loop_arrays[f"h/{n}"] for n in names if f"h/{n}" in tr.loop_arrays} or None
    reached = L.get("target_reached", False)
    try:
        while tr.state.step < max_steps and not reached and not tr.out_of_time():
            if L["pos"] >= per_epoch:
                L["epoch"] += 1
                L["pos"] = 0
                carried = None
            batches = batch_lm(train_ids, cfg.T, cfg.B)
            X, Y = _nth(batches, L["pos"])
            L["pos"] += 1
            lv, _, tape = tr.step(X, Y, cross_entropy_loss, initial_states=carried)
            carried = dict(tape.context.final_states)
            for k, v in carried.items():
                tr.loop_arrays[f"h/{k}"] = v
            L["sum"] += bits_per_char(lv.loss)
            L["count"] += 1
            tr.after_step()
            if tr.state.step % cfg.eval_every == 0 or tr.out_of_time() or tr.state.step >= max_steps:
                vb = evaluate_bpc(tr.net, valid_ids, cfg.T, cfg.B)
                L["best"] = min(L["best"], vb)
                tr.rec.row(step=tr.state.step, epoch=L["epoch"], lr=tr.state.lr,
                           train_bpc=L["sum"] / max(L["count"], 1), valid_bpc=vb, best_valid_bpc=L["best"])
                L.update(sum=0.0, count=0)
                tr.on_eval(vb, higher_is_better=False)
                reached = not math.isnan(cfg.target) and vb < cfg.target
                L["target_reached"] = reached
            tr.end_iteration()
    except FloatingPointError as exc:
        return _nonfinite_result(tr, exc)
    steps = tr.rec.column("step")
    _plot_series(cfg, tr.rec.out, "valid_bpc.svg",
                 {"valid BPC": (steps, tr.rec.column("valid_bpc")),
                  "order-0 entropy": ([steps[0], steps[-1]], [entropy0, entropy0])} if steps else {},
                 plots.Axes(title=f"character LM, T={cfg.T}", xlabel="step", ylabel="bits per char"))
    report = tr.finish({"status": "ok", "best_valid_bpc": L["best"],
                        "final_valid_bpc": tr.rec.column("valid_bpc")[-1] if steps else None,
                        "order0_entropy_bits": entropy0, "vocab_size": V,
                        "corpus_bytes": int(corpus.ids.size), "epochs": L["epoch"]})
    return RunResult(EXIT_OK, report, tr.rec.out)


def _nth(gen, n):
    for i, item in enumerate(gen):
        if i == n:
            return item
    raise IndexError(n)


def evaluate_bpc(net, ids, T, B):
    """Validation bits per character, hidden state carried across windows."""
    if ids.size < B * (T + 1):
        B = max(1, ids.size // (T + 1))
    state, total, count = None, 0.0, 0
    for X, Y in batch_lm(ids, T, B):
        out, tape = network_forward(net, X, False, initial_states=state)
        state = dict(tape.context.final_states)
        total += cross_entropy_loss(out, Y).loss * Y.size
        count += Y.size
    return bits_per_char(total / count)


# Gradient flow ------------------------------------------------------------------

def run_gradflow(cfg, out_dir, resume=None):
    """Train an IndRNN and a vanilla tanh RNN of equal depth on the pixel task to
    the same training loss (``target``) or the step budget, then record the
    gradient that reaches each input step."""
    train_full, _ = load_pixel_data(cfg)
    rec = RunRecorder(cfg, out_dir)
    traces, summary = {}, {}
    for cell in ("indrnn", "vanilla"):
        c = cfg.replace(cell=cell, activation="relu" if cell == "indrnn" else "tanh",
                        kind="stacked", composite="weight-bn-rec" if cfg.batch_norm else "")
        spec = c.network_spec(input_dim=1, output_dim=10, output_mode=LAST_STEP,
                              seq_len_hint=train_full.seq_len)
        rngs = _rngs(cfg.seed)
        net = build_network(spec, rngs["init"])
        state = TrainState.create(net, c.lr, rngs["dropout"])
        smooth = None
        order, pos = make_permutation(rngs["data"], len(train_full)), 0
        while state.step < cfg.steps:
            if pos + cfg.B > len(order):
                order, pos = make_permutation(rngs["data"], len(train_full)), 0
            idx = order[pos:pos + cfg.B]
            pos += cfg.B
            lv, _, _ = train_step(net, state, pixelize(train_full, idx), train_full.labels[idx],
                                  cross_entropy_loss, rngs["dropout"], cfg.weight_decay)
            smooth = lv.loss if smooth is None else 0.95 * smooth + 0.05 * lv.loss
            if not math.isnan(cfg.target) and smooth <= cfg.target:
                break
        eval_rng = rngs["eval"]
        probe = [(pixelize(train_full, ix), train_full.labels[ix]) for ix in
                 (make_permutation(eval_rng, len(train_full))[:cfg.B] for _ in range(cfg.eval_batches))]
        trace = record_gradient_flow(net, probe, cross_entropy_loss)
        probe_loss = float(np.mean([cross_entropy_loss(network_forward(net, X, False)[0], y).loss
                                    for X, y in probe]))
        traces[cell] = trace
        rec.row(cell=cell, step=state.step, train_loss=smooth, t0_grad=float(trace.over_time[0]),
                tT_grad=float(trace.over_time[-1]))
        summary[cell] = {"steps": state.step, "train_loss": smooth, "probe_loss": probe_loss,
                         "over_time": trace.over_time.tolist(), "over_depth": trace.over_depth.tolist()}
    with open(rec.out / "traces.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(("cell", "axis", "index", "value"))
        for cell, tr in traces.items():
            w.writerows((cell, "time", i, repr(float(v))) for i, v in enumerate(tr.over_time))
            w.writerows((cell, "depth", i, repr(float(v))) for i, v in enumerate(tr.over_depth))
    T = len(traces["indrnn"].over_time)
    _plot_series(cfg, rec.out, "gradient_over_time.svg",
                 {c: (list(range(T)), t.over_time.tolist()) for c, t in traces.items()},
                 plots.Axes(title="input-gradient norm per step", xlabel="t", ylabel="norm", log_y=True))
    ratio = float(traces["indrnn"].over_time[0] / max(traces["vanilla"].over_time[0], 1e-300))
    report = {"status": "ok", "task": cfg.task, "seed": cfg.seed, "t0_ratio": ratio, **summary}
    rec.report(report)
    return RunResult(EXIT_OK, report, rec.out)


# Gradient check ------------------------------------------------------------------

def random_tiny_spec(rng, kind, activation="tanh"):
    """A small random network of the given kind for gradient checking."""
    T = 2 + rng.integers(4)
    M = 2 + rng.integers(3)
    common = dict(kind=kind, input_dim=M, output_dim=1 + rng.integers(3), activation=activation,
                  dropout=Dropouts(layer=0.2, input=0.2, dense=0.2, bottleneck=0.1, transition=0.1),
                  batch_norm=bool(rng.integers(2)) or kind != "stacked", seq_len_hint=T,
                  gamma=2.0, output_mode=(LAST_STEP, EVERY_STEP_OUTPUT)[rng.integers(2)],
                  bn_policy=("all_steps", "per_step")[rng.integers(2)])
    if kind == "dense":
        spec = NetworkSpec(growth_rate=2 + rng.integers(2), block_config=(1 + rng.integers(2), 1), **common)
    else:
        spec = NetworkSpec(layers=1 + rng.integers(2), hidden=2 + rng.integers(3), **common)
    return spec, T, 4 + rng.integers(3)


def run_gradcheck(cfg, out_dir, resume=None):
    rec = RunRecorder(cfg, out_dir)
    rng = seed_rng(cfg.seed)
    kinds = ("stacked", "residual", "dense")
    worst = 0.0
    for trial in range(cfg.trials):
        kind = kinds[trial % 3]
        spec, T, B = random_tiny_spec(rng, kind)
        net = build_network(spec, rng.spawn())
        X = rng.normal((T, B, spec.input_dim))
        shape = (B, spec.output_dim) if spec.output_mode == LAST_STEP else (T, B, spec.output_dim)
        target = rng.normal(shape)
        res = finite_difference_check(net, (X, target), mse_loss, seed=trial)
        worst = max(worst, res.max_rel_error)
        rec.row(trial=trial, kind=kind, max_rel_error=res.max_rel_error, checked=res.checked,
                excluded=len(res.excluded))
    ok = worst < 1e-5
    print(f"gradcheck: {cfg.trials} networks, max relative error {worst:.3e} "
          f"({'ok' if ok else 'FAILED'}; tolerance 1e-05)")
    report = {"status": "ok" if ok else "failed", "task": cfg.task, "seed": cfg.seed,
              "max_rel_error": worst, "trials": cfg.trials}
    rec.report(report)
    return RunResult(EXIT_OK if ok else EXIT_FAILED, report, rec.out)


# RNN equivalence --------------------------------------------------------------------

def random_diagonalizable(rng, N, cond_target=20.0):
    """U = S diag(lam) S^-1 with real spectrum in (-1, 1) and a moderately
    conditioned random basis S."""
    while True:
        S = rng.normal((N, N))
        if np.linalg.cond(S) < cond_target:
            break
    lam = rng.uniform(-0.95, 0.95, size=N)
    return S @ np.diag(lam) @ np.linalg.inv(S)


def run_equiv(cfg, out_dir, resume=None):
    rec = RunRecorder(cfg, out_dir)
    rng = seed_rng(cfg.seed)
    worst = 0.0
    for trial in range(cfg.trials):
        N = (3, 5)[trial % 2]
        M = 1 + rng.integers(4)
        rnn = LinearRnn(random_diagonalizable(rng, N), rng.normal((N, M)))
        pair = rnn_to_indrnn(rnn)
        X = rng.normal((10, 2, M))
        dev = verify_equivalence(rnn, pair, X, 10)
        worst = max(worst, dev)
        rec.row(trial=trial, N=N, condition=pair.condition, deviation=dev)
    try:
        rnn_to_indrnn(LinearRnn(np.array([[0.0, 1.0], [0.0, 0.0]]), np.eye(2)))
        rejected = False
    except NotRepresentableError:
        rejected = True
    ok = worst < 1e-8 and rejected
    print(f"equiv: {cfg.trials} systems, max deviation {worst:.3e}, defective matrix "
          f"{'rejected' if rejected else 'ACCEPTED'} ({'ok' if ok else 'FAILED'})")
    report = {"status": "ok" if ok else "failed", "task": cfg.task, "seed": cfg.seed,
              "max_deviation": worst, "defective_rejected": rejected}
    rec.report(report)
    return RunResult(EXIT_OK if ok else EXIT_FAILED, report, rec.out)


# Benchmark ----------------------------------------------------------------------------

def run_bench(cfg, out_dir, resume=None):
    rec = RunRecorder(cfg, out_dir)
    results = benchmod.run_sweep(cfg.widths, cfg.T, cfg.B, cfg.reps, seed=cfg.seed)
    for r in results:
        rec.row(**dict(zip(benchmod.CSV_HEADER, r.row())))
    exps = benchmod.scaling_fit(results)
    at = {r.kind: r.median_ms for r in results if r.N == 512}
    faster = at.get(benchmod.INDRNN_FUSED, math.inf) < at.get(benchmod.VANILLA_MATMUL, -math.inf) \
        if at else None
    _plot_series(cfg, rec.out, "bench.svg",
                 {k: ([r.N for r in results if r.kind == k], [r.median_ms for r in results if r.kind == k])
                  for k in benchmod.KINDS},
                 plots.Axes(title=f"recurrent loop time, T={cfg.T}, B={cfg.B}", xlabel="N",
                            ylabel="ms per batch", log_y=True))
    advisory = (exps.get(benchmod.INDRNN_FUSED, 9) <= 1.3 and exps.get(benchmod.VANILLA_MATMUL, 0) >= 1.7)
    print("bench: exponents " + ", ".join(f"{k} {v:.3f}" for k, v in exps.items())
          + (f"; fused faster at N=512: {faster}" if faster is not None else "")
          + f" ({'as expected' if advisory else 'advisory: outside expected range'})")
    report = {"status": "ok", "task": cfg.task, "exponents": exps, "fused_faster_at_512": faster,
              "advisory_pass": advisory, "medians": {f"{r.kind}/{r.N}": r.median_ms for r in results}}
    rec.report(report)
    return RunResult(EXIT_OK, report, rec.out)


RUNNERS = {"adding": run_adding, "pixels": run_pixels, "charlm": run_charlm, "gradflow": run_gradflow,
           "gradcheck": run_gradcheck, "equiv": run_equiv, "bench": run_bench}


def run(cfg, out_dir=None, resume=None):
    out_dir = Path(out_dir or cfg.out or os.path.join("runs", f"{cfg.task}-seed{cfg.seed}"))
    return RUNNERS[cfg.task](cfg, out_dir, resume)
