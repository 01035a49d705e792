"""Experiment orchestration: pools, models, training loops, evaluation, reports.

One run directory per seed:
    metrics.csv     per-epoch loss/accuracy/epsilon/seconds
    report.txt      final numbers
    config.cfg      resolved configuration echo
    model.ckpt      parameters plus export.* tables for offline rendering
    confusion.pgm   primary perception confusion (extras as confusion_<name>.pgm)
    rules.csv       raw rule table(s) with confidences
    rules_aligned.csv  integer table(s) after symbol alignment
    traces.jsonl    optional per-sample evaluation traces
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as D
from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .config import render_config, validate
from .layers import PerceptionNet
from .models import (DirectModel, MultiDigitModel, RecurrentModel,
                     dump_traces, train_step)
from .optim import make_optimizer
from .policy import Policy, make_rng
from .symbolic import (RuleWeights, align_symbols, apply_alignment,
                       export_rules_csv, export_table_csv,
                       materialize_rule_table, rule_accuracy,
                       rule_confidences, write_pgm)

RULE_LR_PREFIXES = ("rule", "gs", "gc", "w0")


# ---------------------------------------------------------------------------
# results

@dataclass
class EvalResult:
    accuracy: float
    predictions: np.ndarray
    labels: np.ndarray
    correct: np.ndarray
    slot_symbols: dict
    fine_grained: float = None
    traces: list = None


@dataclass
class SeedResult:
    seed: int
    curves: list                 # per-epoch dicts
    accuracy: float
    fine_grained: float
    confusions: dict             # name -> (true classes, symbols) counts
    alignments: dict             # name -> PermutationAlignment
    raw_tables: dict             # name -> integer table before alignment
    tables: dict                 # name -> integer table after alignment
    rule_accuracies: dict        # name -> fraction matching the oracle
    extras: dict = field(default_factory=dict)
    seconds_per_epoch: float = None
    out_dir: str = None


@dataclass
class MetricsReport:
    task: str
    seed_results: list
    config: object = None

    @property
    def accuracies(self):
        return [r.accuracy for r in self.seed_results]

    @property
    def accuracy_mean(self):
        return float(np.mean(self.accuracies))

    @property
    def accuracy_std(self):
        """Population std over seeds; None (reported n/a) below 2 seeds."""
        if len(self.seed_results) < 2:
            return None
        return float(np.std(self.accuracies))

    def summary_text(self):
        lines = [f"task: {self.task}", f"seeds: {len(self.seed_results)}"]
        for r in self.seed_results:
            acc = f"seed {r.seed}: accuracy {r.accuracy:.4f}"
            if r.fine_grained is not None:
                acc += f", fine-grained {r.fine_grained:.4f}"
            lines.append(acc)
        std = "n/a" if self.accuracy_std is None else f"{self.accuracy_std:.4f}"
        lines.append(f"accuracy mean {self.accuracy_mean:.4f} std {std}")
        fg = [r.fine_grained for r in self.seed_results if r.fine_grained is not None]
        if fg:
            lines.append(f"fine-grained mean {float(np.mean(fg)):.4f}")
        ref = self.seed_results[0]
        for name, acc in sorted(ref.rule_accuracies.items()):
            accs = [r.rule_accuracies[name] for r in self.seed_results]
            lines.append(f"rule {name}: oracle match {float(np.mean(accs)):.4f}")
        for name, al in sorted(ref.alignments.items()):
            lines.append(f"alignment {name}: {al.permutation.tolist()}")
        for key, value in sorted(ref.extras.items()):
            lines.append(f"{key}: {value}")
        secs = [r.seconds_per_epoch for r in self.seed_results
                if r.seconds_per_epoch is not None]
        if secs:
            lines.append(f"seconds/epoch mean {float(np.mean(secs)):.3f}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# pools and datasets

def build_pools(cfg):
    """Disjoint train/test image pools (plus operator pools for multiop)."""
    d = cfg.data
    cache = d.cache_dir or None
    pools = {}
    if d.source == "synthetic":
        pools["train"] = D.cached_pool("digits", d.train_pool, d.pool_seed, cache)
        pools["test"] = D.cached_pool("digits", d.test_pool, d.pool_seed + 1, cache)
        if cfg.task.name == "multiop":
            pools["op_train"] = D.cached_pool("ops", d.train_pool // 4 or 1,
                                              d.pool_seed + 2, cache)
            pools["op_test"] = D.cached_pool("ops", d.test_pool // 4 or 1,
                                             d.pool_seed + 3, cache)
    else:
        pools["train"], pools["test"] = D.load_mnist(d.data_dir)
        if cfg.task.name == "multiop":
            ops = D.load_emnist_ops(d.op_dir or d.data_dir)
            pools["op_train"] = D.LabeledImageSet(ops.images[0::2], ops.labels[0::2])
            pools["op_test"] = D.LabeledImageSet(ops.images[1::2], ops.labels[1::2])
    return pools


def _train_datasets(cfg, pools, seed, phase):
    t = cfg.task
    pool = pools["train"]
    if t.name == "sum":
        return [D.build_sum_dataset(pool, t.train_count, (seed, 21))]
    if t.name == "minus":
        return [D.build_minus_dataset(pool, (seed, 21))]
    if t.name == "parity":
        out = [D.build_parity_dataset(pool, t.seq_len, t.train_count, (seed, 21))]
        if t.anchor_count:
            out.append(D.build_parity_dataset(pool, 1, t.anchor_count, (seed, 22)))
        return out
    if t.name == "multiop":
        return [D.build_multiop_dataset(pool, pools["op_train"],
                                        t.train_count, (seed, 21))]
    if phase == 1:
        return [D.build_multidigit_dataset(pool, 1, 1, (seed, 21),
                                           count=t.train_count)]
    ph = 2 if t.digits == 2 else "eval"
    return [D.build_multidigit_dataset(pool, t.digits, ph, (seed, 23),
                                       count=t.train_count)]


def build_eval_dataset(cfg, pools):
    """Fixed test set (keyed off the pool seed, shared by all run seeds)."""
    t, s = cfg.task, cfg.data.pool_seed
    pool = pools["test"]
    if t.name == "sum":
        return D.build_sum_dataset(pool, t.test_count, (s, 5))
    if t.name == "minus":
        return D.build_minus_pairs(pool, t.test_count, (s, 5))
    if t.name == "parity":
        return D.build_parity_dataset(pool, t.test_seq_len, t.test_count, (s, 5))
    if t.name == "multiop":
        return D.build_multiop_dataset(pool, pools["op_test"], t.test_count, (s, 5))
    return D.build_multidigit_dataset(pool, t.eval_digits, "eval", (s, 5),
                                      count=t.test_count)


# ---------------------------------------------------------------------------
# oracles and models

def oracle_tables(task, state_symbols=2):
    """Ground-truth integer tables in human symbol space."""
    d = np.arange(10)
    if task == "sum":
        return {"rule": np.add.outer(d, d)}
    if task == "minus":
        return {"rule": np.subtract.outer(d, d) + 9}
    if task == "parity":
        b = np.arange(2)
        return {"rule": np.bitwise_xor.outer(b, b), "w0": np.int64(0)}
    if task == "multidigit":
        total = d[:, None, None] + d[None, :, None] + np.arange(state_symbols)
        return {"gs": total % 10, "gc": total // 10, "w0": np.int64(0)}
    table = np.zeros((10, 4, 10), dtype=np.int64)
    feasible = np.zeros((10, 4, 10), dtype=bool)
    for d1 in range(10):
        for op in range(4):
            for d2 in range(10):
                if op == 1 and d2 > d1:
                    continue
                if op == 3 and d2 == 0:
                    continue
                table[d1, op, d2] = D.apply_op(op, d1, d2)
                feasible[d1, op, d2] = True
    return {"rule": table, "rule_feasible": feasible}


def build_model(cfg, seed):
    m = cfg.model
    policy = Policy(kind="epsilon_greedy", epsilon=cfg.policy.epsilon,
                    decay_epochs=cfg.policy.decay_epochs)
    net = lambda k, salt: PerceptionNet(k, backbone=m.backbone,
                                        rng=make_rng((seed, salt)),
                                        dtype=m.dtype)
    rule = lambda ins, out, salt: RuleWeights(ins, out, rng=make_rng((seed, salt)),
                                              init_scale=m.rule_init)
    oracles = oracle_tables(cfg.task.name, m.state_symbols)
    task = cfg.task.name
    if task in ("sum", "minus", "multiop"):
        if task == "multiop":
            dnet, onet = net(m.num_symbols, 1), net(m.op_symbols, 2)
            nets, names = [dnet, onet, dnet], ["net", "op", "net"]
            ins, out = [m.num_symbols, m.op_symbols, m.num_symbols], 82
        else:
            if m.shared_net:
                n1 = net(m.num_symbols, 1)
                nets, names = [n1, n1], ["net", "net"]
            else:
                nets = [net(m.num_symbols, 1), net(m.num_symbols, 2)]
                names = ["net1", "net2"]
            ins, out = [m.num_symbols, m.num_symbols], 19
        if m.freeze_rule:
            return DirectModel(nets, frozen_table=oracles["rule"],
                               policy=policy, seed=(seed, 4), net_names=names)
        return DirectModel(nets, rule=rule(ins, out, 3),
                           policy=policy, seed=(seed, 4), net_names=names)
    if task == "parity":
        pnet = net(m.num_symbols, 1)
        if m.freeze_rule:
            return RecurrentModel(pnet, frozen_table=oracles["rule"],
                                  frozen_initial=0, policy=policy,
                                  seed=(seed, 4),
                                  initial_in_min=m.initial_in_min)
        return RecurrentModel(pnet, rule=rule([m.num_symbols, m.state_symbols],
                                              m.state_symbols, 3),
                              initial=rule([], m.state_symbols, 5),
                              policy=policy, seed=(seed, 4),
                              initial_in_min=m.initial_in_min)
    dnet = net(m.num_symbols, 1)
    if m.freeze_rule:
        return MultiDigitModel(dnet, frozen_gs=oracles["gs"],
                               frozen_gc=oracles["gc"], frozen_w0=0,
                               policy=policy, seed=(seed, 4),
                               initial_in_min=m.initial_in_min)
    return MultiDigitModel(dnet,
                           gs=rule([m.num_symbols, m.num_symbols,
                                    m.state_symbols], 10, 3),
                           gc=rule([m.num_symbols, m.num_symbols,
                                    m.state_symbols], m.state_symbols, 5),
                           w0=rule([], m.state_symbols, 6),
                           policy=policy, seed=(seed, 4),
                           initial_in_min=m.initial_in_min)


# ---------------------------------------------------------------------------
# evaluation

def fine_grained_accuracy(predictions, labels):
    """Mean over samples of the fraction of matching digit positions."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValueError("predictions and labels shapes differ")
    return float((predictions == labels).mean())


def evaluate(model, ds, batch_size=256, want_traces=False):
    """Greedy evaluation; never mutates parameters or the training RNG."""
    mode = model.mode
    model.eval_mode()
    preds, corrects, traces = [], [], []
    sym_chunks = {}
    try:
        for lo in range(0, len(ds), batch_size):
            rows = np.arange(lo, min(lo + batch_size, len(ds)))
            res = model.forward_batch(ds.gather(rows), labels=ds.labels[rows],
                                      want_traces=want_traces)
            preds.append(res.predictions)
            corrects.append(res.correct)
            for name, arr in res.slot_symbols.items():
                sym_chunks.setdefault(name, []).append(arr)
            if want_traces:
                traces.extend(res.traces)
    finally:
        if mode == "train":
            model.train_mode()
    predictions = np.concatenate(preds)
    correct = np.concatenate(corrects)
    fine = (fine_grained_accuracy(predictions, ds.labels)
            if ds.labels.ndim == 2 else None)
    return EvalResult(accuracy=float(correct.mean()), predictions=predictions,
                      labels=ds.labels.copy(), correct=correct,
                      slot_symbols={k: np.concatenate(v)
                                    for k, v in sym_chunks.items()},
                      fine_grained=fine, traces=traces if want_traces else None)


def evaluate_width(model, pool, width, count, seed, batch_size=64):
    """Multidigit evaluation at an arbitrary operand width."""
    ds = D.build_multidigit_dataset(pool, width, "eval", seed, count=count)
    return evaluate(model, ds, batch_size=batch_size)


def center_symbol_heads(model, pools, sample=2000):
    """Cancel each untrained net's shared logit offset on a corpus sample.

    Fresh nets rank symbols almost identically for every image (the offset
    w.mu dominates the input-dependent part), so the whole corpus lands on
    one or two argmax symbols and joint training locks onto the label mode
    before perception can spread. Subtracting the mean centered logit from
    the head bias makes the initial argmax input-driven; training then has
    ten live clusters to reinforce instead of two.
    """
    nets = list(getattr(model, "nets", [])) or [getattr(model, "net", None)]
    names = list(getattr(model, "net_names", [])) or ["net"] * len(nets)
    done = set()
    for name, net in zip(names, nets):
        if net is None or id(net) in done or not hasattr(net, "fc2"):
            continue
        done.add(id(net))
        pool = pools["op_train"] if name == "op" else pools["train"]
        with T.no_grad():
            probs = net.forward_probs(pool.images[:sample]).data
        logits = np.log(np.clip(probs, 1e-12, None))
        net.fc2.b.data -= ((logits - logits.mean(axis=1, keepdims=True))
                           .mean(axis=0).astype(net.fc2.b.data.dtype))


def build_confusions(task, ds, result, model):
    """Counts of true class (rows) vs chosen perception symbol (cols)."""
    syms = result.slot_symbols
    idx = ds.inputs
    out = {}

    def bump(name, true, chosen, n_true, n_sym):
        mat = out.setdefault(name, np.zeros((n_true, n_sym), dtype=np.int64))
        np.add.at(mat, (np.asarray(true), np.asarray(chosen)), 1)

    if task in ("sum", "minus"):
        for i, name in enumerate(model.net_names):
            bump(name, ds.pool.labels[idx[:, i]], syms[f"x{i + 1}"],
                 10, model.nets[i].num_symbols)
    elif task == "multiop":
        for i in (0, 2):
            bump(model.net_names[0], ds.pool.labels[idx[:, i]],
                 syms[f"x{i + 1}"], 10, model.nets[0].num_symbols)
        bump(model.net_names[1], ds.op_pool.labels[idx[:, 1]], syms["x2"],
             4, model.nets[1].num_symbols)
    elif task == "parity":
        for t in range(idx.shape[1]):
            bump("net", ds.pool.labels[idx[:, t]], syms[f"x{t + 1}"],
                 2, model.net.num_symbols)
    else:
        K = idx.shape[2]
        k_img = model.net.num_symbols
        digits = ds.pool.labels[idx]  # (B, 2, K) most-significant first
        n_state = (model.w0.out_space.size if model.w0 is not None
                   else int(model.frozen_gc.max()) + 1 if model.frozen_gc is not None
                   else 2)
        true_carry = np.zeros(len(idx), dtype=np.int64)
        for step in range(K):
            pos = K - 1 - step
            bump("net", digits[:, 0, pos], syms[f"x{step + 1}"], 10, k_img)
            bump("net", digits[:, 1, pos], syms[f"y{step + 1}"], 10, k_img)
            chosen = syms.get("W0") if step == 0 else syms.get(f"Gc{step}")
            if chosen is not None:
                bump("carry", true_carry, chosen, n_state, n_state)
            true_carry = (digits[:, 0, pos] + digits[:, 1, pos] + true_carry) // 10
    return out


def perception_accuracy(confusion, alignment):
    """Fraction of perceptions landing on their aligned true class."""
    k = len(alignment.permutation)
    pad = np.zeros((k, k), dtype=np.float64)
    pad[:confusion.shape[0], :confusion.shape[1]] = confusion
    aligned = pad[:, alignment.inverse]
    total = pad.sum()
    return float(np.trace(aligned) / total) if total else 0.0


def active_columns(confusion, threshold=0.01):
    """Predicted symbols carrying more than `threshold` of the mass."""
    total = confusion.sum()
    if total == 0:
        return 0
    return int(((confusion.sum(axis=0) / total) > threshold).sum())


# ---------------------------------------------------------------------------
# alignment and rule analysis

def _model_tables(model, task):
    """name -> (raw integer table, RuleWeights or None)."""
    if task in ("sum", "minus", "multiop"):
        if model.rule is not None:
            return {"rule": (materialize_rule_table(model.rule), model.rule)}
        return {"rule": (model.frozen_table, None)}
    if task == "parity":
        out = {}
        out["rule"] = ((materialize_rule_table(model.rule), model.rule)
                       if model.rule is not None else (model.frozen_table, None))
        out["w0"] = ((materialize_rule_table(model.initial), model.initial)
                     if model.initial is not None
                     else (np.int64(model.frozen_initial), None))
        return out
    out = {}
    for name in ("gs", "gc", "w0"):
        rw = getattr(model, name)
        if rw is not None:
            out[name] = (materialize_rule_table(rw), rw)
        else:
            frozen = getattr(model, f"frozen_{name}")
            out[name] = (np.asarray(frozen), None)
    return out


def analyze_rules(task, model, confusions):
    """Alignments, aligned tables, and oracle match rates after a run."""
    alignments = {name: align_symbols(mat) for name, mat in confusions.items()}
    tables = _model_tables(model, task)
    raw = {name: np.asarray(t) for name, (t, _) in tables.items()}
    oracles = oracle_tables(task)
    aligned, accs = {}, {}
    if task in ("sum", "minus"):
        p1 = alignments[model.net_names[0]].permutation
        p2 = alignments[model.net_names[1]].permutation
        t = apply_alignment(raw["rule"], p1, axes=(0,))
        t = apply_alignment(t, p2, axes=(1,))
        aligned["rule"] = t
        accs["rule"] = rule_accuracy(t[:10, :10], oracles["rule"])
    elif task == "multiop":
        t = apply_alignment(raw["rule"], alignments["net"].permutation, axes=(0, 2))
        t = apply_alignment(t, alignments["op"].permutation, axes=(1,))
        aligned["rule"] = t
        feasible = oracles["rule_feasible"]
        accs["rule"] = float((t[feasible] == oracles["rule"][feasible]).mean())
    elif task == "parity":
        t = apply_alignment(raw["rule"], alignments["net"].permutation, axes=(0,))
        aligned["rule"] = t
        aligned["w0"] = raw["w0"]
        accs["rule"] = rule_accuracy(t, oracles["rule"])
        accs["w0"] = float(raw["w0"] == oracles["w0"])
    else:
        dig = alignments["net"].permutation
        car = alignments["carry"].permutation if "carry" in alignments else np.arange(2)
        gs = apply_alignment(raw["gs"], dig, axes=(0, 1))
        gs = apply_alignment(gs, car, axes=(2,))
        gc = apply_alignment(raw["gc"], dig, axes=(0, 1))
        gc = apply_alignment(gc, car, axes=(2,), relabel_output=True)
        w0 = car[int(raw["w0"])]
        aligned.update(gs=gs, gc=gc, w0=np.int64(w0))
        oc = oracle_tables(task, gs.shape[2])
        accs["gs"] = rule_accuracy(gs, oc["gs"])
        accs["gc"] = rule_accuracy(gc, oc["gc"])
        accs["w0"] = float(w0 == 0)
    return alignments, raw, aligned, accs


# ---------------------------------------------------------------------------
# training

def _epoch_batches(ds_list, batch_size, rng):
    for ds in ds_list:
        order = rng.permutation(len(ds))
        for lo in range(0, len(ds), batch_size):
            yield ds, order[lo:lo + batch_size]


def _run_seed(cfg, pools, eval_ds, seed, out_dir=None):
    model = build_model(cfg, seed)
    if cfg.task.transfer_from:
        blob = load_checkpoint(cfg.task.transfer_from)
        model.load_state(blob, skip_prefixes=RULE_LR_PREFIXES)
    else:
        center_symbol_heads(model, pools)
    overrides = {p: cfg.optim.rule_lr for p in RULE_LR_PREFIXES}
    opt = make_optimizer(model.named_params(), algo=cfg.optim.algo,
                         lr=cfg.optim.lr, momentum=cfg.optim.momentum,
                         lr_overrides=overrides)
    phases = []
    if cfg.task.name == "multidigit" and cfg.train.phase1_epochs > 0:
        phases.append((1, cfg.train.phase1_epochs))
    phases.append((2 if cfg.task.name == "multidigit" else 0, cfg.train.epochs))

    curves = []
    epoch_idx = 0
    model.train_mode()
    for phase, n_epochs in phases:
        if n_epochs <= 0:
            continue
        ds_list = _train_datasets(cfg, pools, seed, phase)
        for _ in range(n_epochs):
            t0 = time.perf_counter()
            rng = np.random.default_rng((seed, 17, epoch_idx))
            loss_sum = hit_sum = n_seen = 0.0
            for ds, rows in _epoch_batches(ds_list, cfg.train.batch_size, rng):
                loss, acc, _ = train_step(model, ds.gather(rows),
                                          ds.labels[rows], opt,
                                          epoch=epoch_idx)
                loss_sum += loss * len(rows)
                hit_sum += acc * len(rows)
                n_seen += len(rows)
            curves.append({"epoch": epoch_idx, "phase": phase,
                           "loss": loss_sum / n_seen,
                           "accuracy": hit_sum / n_seen,
                           "epsilon": model.policy.epsilon_at(epoch_idx),
                           "seconds": time.perf_counter() - t0})
            epoch_idx += 1

    result = evaluate(model, eval_ds, batch_size=cfg.train.eval_batch,
                      want_traces=cfg.train.dump_traces)
    confusions = build_confusions(cfg.task.name, eval_ds, result, model)
    alignments, raw_tables, tables, rule_accs = analyze_rules(
        cfg.task.name, model, confusions)

    extras = {}
    for name, mat in confusions.items():
        extras[f"active_columns.{name}"] = active_columns(mat)
    if cfg.task.name == "multidigit":
        extras["perception_accuracy"] = perception_accuracy(
            confusions["net"], alignments["net"])
        w0_aligned = int(tables["w0"])
        extras["mod10_slice_accuracy"] = rule_accuracy(
            tables["gs"][:, :, w0_aligned],
            np.add.outer(np.arange(10), np.arange(10)) % 10)
    if cfg.task.name == "multiop":
        counts = np.bincount(eval_ds.labels)
        extras["chance_accuracy"] = float(counts.max() / counts.sum())

    seed_result = SeedResult(
        seed=seed, curves=curves, accuracy=result.accuracy,
        fine_grained=result.fine_grained, confusions=confusions,
        alignments=alignments, raw_tables=raw_tables, tables=tables,
        rule_accuracies=rule_accs, extras=extras,
        seconds_per_epoch=(float(np.mean([c["seconds"] for c in curves]))
                           if curves else None),
        out_dir=str(out_dir) if out_dir else None)
    if out_dir is not None:
        _write_run_dir(Path(out_dir), cfg, model, seed_result, result)
    return seed_result


def _write_run_dir(out, cfg, model, sr, eval_result):
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(render_config(cfg))
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "phase", "loss", "accuracy",
                         "epsilon", "seconds"])
        for c in sr.curves:
            writer.writerow([c["epoch"], c["phase"], f"{c['loss']:.6f}",
                             f"{c['accuracy']:.6f}", f"{c['epsilon']:.4f}",
                             f"{c['seconds']:.3f}"])
    report = MetricsReport(cfg.task.name, [sr], cfg)
    (out / "report.txt").write_text(report.summary_text())

    names = sorted(sr.confusions)
    primary = "net" if "net" in names else names[0]
    write_pgm(out / "confusion.pgm", sr.confusions[primary])
    for name in names:
        if name != primary:
            write_pgm(out / f"confusion_{name}.pgm", sr.confusions[name])

    task = cfg.task.name
    rules = _model_tables(model, task)
    main = "rule" if "rule" in rules else "gs"
    for name, (raw, rw) in rules.items():
        path = out / ("rules.csv" if name == main else f"rules_{name}.csv")
        if rw is not None:
            export_rules_csv(path, rw)
        else:
            export_table_csv(path, np.asarray(raw))
        apath = out / ("rules_aligned.csv" if name == main
                       else f"rules_{name}_aligned.csv")
        export_table_csv(apath, np.asarray(sr.tables[name]))

    blob = list(model.state_arrays())
    for name, mat in sorted(sr.confusions.items()):
        blob.append((f"export.confusion.{name}", mat.astype(np.float64)))
    for name, al in sorted(sr.alignments.items()):
        blob.append((f"export.perm.{name}", al.permutation.astype(np.float64)))
    for name, (raw, rw) in sorted(rules.items()):
        blob.append((f"export.raw.{name}", np.asarray(raw, dtype=np.float64)))
        blob.append((f"export.aligned.{name}",
                     np.asarray(sr.tables[name], dtype=np.float64)))
        if rw is not None:
            blob.append((f"export.conf.{name}", rule_confidences(rw)))
    save_checkpoint(out / "model.ckpt", blob)

    if eval_result.traces is not None:
        dump_traces(out / "traces.jsonl", eval_result.traces)


def run_experiment(cfg, pools=None, write=True):
    """Train per seed, evaluate greedily, write one run directory per seed."""
    validate(cfg)
    if pools is None:
        pools = build_pools(cfg)
    root = Path(cfg.train.out_dir or f"runs/{cfg.task.name}")
    eval_ds = build_eval_dataset(cfg, pools)
    results = []
    for seed in cfg.train.seeds:
        out_dir = root / f"seed{seed}" if write else None
        results.append(_run_seed(cfg, pools, eval_ds, seed, out_dir))
    report = MetricsReport(cfg.task.name, results, cfg)
    if write:
        root.mkdir(parents=True, exist_ok=True)
        (root / "config.cfg").write_text(render_config(cfg))
        (root / "report.txt").write_text(report.summary_text())
    return report


def run_curriculum(cfg, pools=None, write=True):
    """Two-phase multidigit training; parameters carry across phases."""
    if cfg.task.name != "multidigit":
        raise ValueError("run_curriculum requires the multidigit task")
    return run_experiment(cfg, pools=pools, write=write)
