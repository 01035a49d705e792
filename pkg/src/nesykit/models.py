"""Trainable NeSy models: perception nets composed with rule tables.

Every forward pass selects one symbol per choice point with the policy,
then takes the minimum of the chosen confidences as the confidence t*
of the composite prediction; BCE against 1(prediction == label) is the
only supervision. Because t* is a min, each sample backpropagates into
exactly one choice's producer.

Three composition shapes: direct n-ary application, simple recurrence
over an image sequence, and the two-table multi-digit adder. Frozen
integer tables can stand in for learnable rules (ablations and oracle
checks); a frozen rule contributes no confidence to the min.
"""

import json
from contextlib import nullcontext
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .policy import Policy, make_rng, select_batch
from .symbolic import RuleWeights

T_CLAMP = 1e-7


@dataclass
class ChoiceTrace:
    slots: list  # (slot label, chosen symbol, confidence) in canonical order
    t_star: float
    argmin_slot: int
    prediction: object  # symbol or digit list
    label: object = None
    correct: bool = None
    t_star_node: object = None  # length-1 graph node when grads are live


@dataclass
class BatchResult:
    predictions: np.ndarray  # (B,) symbols or (B, K) digit rows
    t_star: np.ndarray
    correct: np.ndarray = None
    loss: object = None
    conf_node: object = None  # (B, n_choices) stacked confidences
    slot_labels: list = None
    slot_symbols: dict = None  # label -> (B,) chosen symbols
    traces: list = None


def _bce(t_node, l):
    """Mean of -[l log t* + (1-l) log(1-t*)] with t* clamped."""
    t = T.clip(t_node, T_CLAMP, 1.0 - T_CLAMP)
    hit = T.cmul(T.log(t), l)
    miss = T.cmul(T.log(T.one_minus(t)), 1.0 - l)
    return T.neg(T.mean_all(T.add(hit, miss)))


def compute_loss(trace):
    """BCE loss node for one traced sample."""
    t = trace.t_star_node
    if t is None:
        t = T.Tensor(np.array([trace.t_star]))
    l = np.array([1.0 if trace.correct else 0.0])
    return _bce(t, l)


class _Model:
    """Shared plumbing: mode flag, policy, parameter registry."""

    def __init__(self, policy, seed):
        self.policy = policy if policy is not None else Policy()
        self.rng = make_rng(seed)
        self.mode = "train"

    def train_mode(self):
        self.mode = "train"
        return self

    def eval_mode(self):
        self.mode = "eval"
        return self

    def epsilon(self, epoch=None):
        if self.mode != "train":
            return 0.0
        return self.policy.epsilon_at(0 if epoch is None else epoch)

    def _graph_ctx(self):
        return nullcontext() if self.mode == "train" else T.no_grad()

    def named_params(self):
        raise NotImplementedError

    def state_arrays(self):
        return [(name, p.data.copy()) for name, p in self.named_params()]

    def load_state(self, blob, skip_prefixes=()):
        loaded = set()
        for name, p in self.named_params():
            if any(name == s or name.startswith(s + ".") or name.startswith(s)
                   for s in skip_prefixes):
                continue
            if name not in blob:
                raise ValueError(f"checkpoint is missing parameter {name!r}")
            arr = blob[name]
            if arr.shape != p.data.shape:
                raise ValueError(f"checkpoint shape {arr.shape} != {p.data.shape} "
                                 f"for {name!r}")
            p.data[...] = arr.astype(p.data.dtype)
            loaded.add(name)
        return loaded


def _finish_batch(confs, labels_of_slots, slot_syms, preds, correct,
                  want_traces, label_rows=None):
    """Stack confidences, take the row min, and build per-sample traces."""
    conf_node = T.stack_cols(confs) if confs else None
    if conf_node is not None:
        t_star_node = T.row_min(conf_node)
        t_star = t_star_node.data.copy()
        argmin = conf_node.data.argmin(axis=1)
    else:
        t_star_node = None
        t_star = np.ones(len(preds))
        argmin = np.zeros(len(preds), dtype=np.int64)
    traces = None
    if want_traces:
        traces = []
        for b in range(len(preds)):
            slots = [(lab, int(slot_syms[lab][b]),
                      float(conf_node.data[b, j]) if conf_node is not None else 1.0)
                     for j, lab in enumerate(labels_of_slots)]
            node = None
            if t_star_node is not None and T._grad_enabled:
                node = T.rows_slice(t_star_node, b, b + 1)
            pred_b = preds[b] if preds.ndim == 1 else preds[b].tolist()
            lab_b = None
            if label_rows is not None:
                lab_b = label_rows[b] if label_rows.ndim == 1 else label_rows[b].tolist()
            traces.append(ChoiceTrace(
                slots=slots, t_star=float(t_star[b]), argmin_slot=int(argmin[b]),
                prediction=pred_b, label=lab_b,
                correct=None if correct is None else bool(correct[b]),
                t_star_node=node))
    return conf_node, t_star_node, t_star, traces


class DirectModel(_Model):
    """phi'(x1..xn) = G[pi(N1(x1)), ..., pi(Nn(xn))].

    nets may repeat the same object for shared-weight slots; rule is a
    RuleWeights or None when frozen_table (an integer lookup array) is
    given.
    """

    def __init__(self, nets, rule=None, frozen_table=None, policy=None,
                 seed=0, net_names=None):
        super().__init__(policy, seed)
        if (rule is None) == (frozen_table is None):
            raise ValueError("provide exactly one of rule and frozen_table")
        self.nets = list(nets)
        self.rule = rule
        self.frozen_table = None if frozen_table is None else np.asarray(frozen_table)
        if net_names is None:
            shared = len({id(n) for n in self.nets}) == 1
            net_names = (["net"] * len(self.nets) if shared else
                         [f"net{i + 1}" for i in range(len(self.nets))])
        self.net_names = list(net_names)
        sizes = tuple(n.num_symbols for n in self.nets)
        expect = (self.rule.in_sizes if self.rule is not None
                  else self.frozen_table.shape)
        if tuple(expect) != sizes:
            raise ValueError(f"rule input sizes {tuple(expect)} != net symbol "
                             f"counts {sizes}")

    def named_params(self):
        out, seen = [], set()
        for name, net in zip(self.net_names, self.nets):
            if id(net) in seen:
                continue
            seen.add(id(net))
            out.extend((f"{name}.{pn}", p) for pn, p in net.params())
        if self.rule is not None:
            out.append(("rule.weight", self.rule.weights))
        return out

    def forward_batch(self, slot_images, labels=None, epoch=None,
                      want_traces=False):
        if len(slot_images) != len(self.nets):
            raise ValueError(f"expected {len(self.nets)} input slots, "
                             f"got {len(slot_images)}")
        eps = self.epsilon(epoch)
        with self._graph_ctx():
            confs, labs, syms = [], [], {}
            slot_choices = []
            for i, (net, images) in enumerate(zip(self.nets, slot_images)):
                probs = net.forward_probs(images)
                chosen, _ = select_batch(probs.data, eps, self.rng)
                confs.append(T.take_cols(probs, chosen))
                labs.append(f"x{i + 1}")
                syms[f"x{i + 1}"] = chosen
                slot_choices.append(chosen)
            if self.rule is not None:
                flat = self.rule.flat_index(np.stack(slot_choices, axis=1))
                rprobs = self.rule.slice_probs(flat)
                preds, _ = select_batch(rprobs.data, eps, self.rng)
                confs.append(T.take_cols(rprobs, preds))
                labs.append("G")
                syms["G"] = preds
            else:
                preds = self.frozen_table[tuple(slot_choices)]
                syms["G"] = preds
            correct = None if labels is None else preds == np.asarray(labels)
            conf_node, t_node, t_star, traces = _finish_batch(
                confs, labs, syms, preds, correct, want_traces,
                None if labels is None else np.asarray(labels))
            loss = None
            if labels is not None and self.mode == "train":
                loss = _bce(t_node, correct.astype(np.float64))
        return BatchResult(predictions=preds, t_star=t_star, correct=correct,
                           loss=loss, conf_node=conf_node, slot_labels=labs,
                           slot_symbols=syms, traces=traces)


def direct_forward(model, images):
    """Single-sample application; returns (prediction, ChoiceTrace)."""
    res = model.forward_batch([np.asarray(im)[None] for im in images],
                              want_traces=True)
    return res.predictions[0], res.traces[0]


class RecurrentModel(_Model):
    """phi'(X[1..L]) folds G over the sequence from a learned initial symbol.

    rule maps (image symbol, state symbol) -> state symbol; initial is a
    zero-input RuleWeights over the state space. Frozen counterparts:
    frozen_table (k_img, k_state) int array and frozen_initial int.
    initial_in_min=False drops the initial choice's confidence from the
    min while still selecting through it (ablation).
    """

    def __init__(self, net, rule=None, initial=None, frozen_table=None,
                 frozen_initial=None, policy=None, seed=0,
                 initial_in_min=True):
        super().__init__(policy, seed)
        if (rule is None) == (frozen_table is None):
            raise ValueError("provide exactly one of rule and frozen_table")
        if (initial is None) == (frozen_initial is None):
            raise ValueError("provide exactly one of initial and frozen_initial")
        self.net = net
        self.rule = rule
        self.initial = initial
        self.frozen_table = None if frozen_table is None else np.asarray(frozen_table)
        self.frozen_initial = frozen_initial
        self.initial_in_min = initial_in_min
        k_img = net.num_symbols
        if rule is not None and rule.in_sizes[0] != k_img:
            raise ValueError("rule image axis does not match the net")

    def named_params(self):
        out = [(f"net.{n}", p) for n, p in self.net.params()]
        if self.rule is not None:
            out.append(("rule.weight", self.rule.weights))
        if self.initial is not None:
            out.append(("w0.weight", self.initial.weights))
        return out

    def forward_batch(self, sequences, labels=None, epoch=None,
                      want_traces=False):
        sequences = np.asarray(sequences)
        if sequences.ndim != 4:
            raise ValueError("sequences must be (batch, length, H, W)")
        B, L = sequences.shape[:2]
        eps = self.epsilon(epoch)
        with self._graph_ctx():
            if self.initial is not None:
                iprobs = self.initial.slice_probs(np.zeros(B, dtype=np.int64))
                state, _ = select_batch(iprobs.data, eps, self.rng)
                w0_conf = T.take_cols(iprobs, state)
            else:
                state = np.full(B, self.frozen_initial, dtype=np.int64)
                w0_conf = None
            init_state = state
            x_confs, g_confs = [], []
            syms = {}
            for t in range(L):
                probs = self.net.forward_probs(sequences[:, t])
                img_syms, _ = select_batch(probs.data, eps, self.rng)
                x_confs.append(T.take_cols(probs, img_syms))
                syms[f"x{t + 1}"] = img_syms
                if self.rule is not None:
                    flat = self.rule.flat_index(np.stack([img_syms, state], axis=1))
                    rprobs = self.rule.slice_probs(flat)
                    state, _ = select_batch(rprobs.data, eps, self.rng)
                    g_confs.append(T.take_cols(rprobs, state))
                    syms[f"G{t + 1}"] = state
                else:
                    state = self.frozen_table[img_syms, state]
                    syms[f"G{t + 1}"] = state
            confs = x_confs + g_confs
            labs = [f"x{t + 1}" for t in range(L)]
            labs += [f"G{t + 1}" for t in range(len(g_confs))]
            syms["W0"] = init_state
            if w0_conf is not None and self.initial_in_min:
                confs.append(w0_conf)
                labs.append("W0")
            preds = state
            correct = None if labels is None else preds == np.asarray(labels)
            conf_node, t_node, t_star, traces = _finish_batch(
                confs, labs, syms, preds, correct, want_traces,
                None if labels is None else np.asarray(labels))
            loss = None
            if labels is not None and self.mode == "train":
                if t_node is None:
                    raise ValueError("no learnable confidences to supervise")
                loss = _bce(t_node, correct.astype(np.float64))
        return BatchResult(predictions=preds, t_star=t_star, correct=correct,
                           loss=loss, conf_node=conf_node, slot_labels=labs,
                           slot_symbols=syms, traces=traces)


def recurrent_forward(model, sequence):
    """Single-sequence application; returns (prediction, ChoiceTrace)."""
    res = model.forward_batch(np.asarray(sequence)[None], want_traces=True)
    return res.predictions[0], res.traces[0]


class MultiDigitModel(_Model):
    """Positional adder: G_s emits the output digit, G_c threads the carry.

    Inputs are two equal-width digit image lists, most-significant first,
    already padded to the output width; positions are processed least-
    significant first. The carry starts from a learned initial symbol and
    G_c is not applied at the last position (its output could not affect
    the prediction).
    """

    def __init__(self, net, gs=None, gc=None, w0=None, frozen_gs=None,
                 frozen_gc=None, frozen_w0=None, policy=None, seed=0,
                 initial_in_min=True, perception_chunk=4096):
        super().__init__(policy, seed)
        if (gs is None) == (frozen_gs is None):
            raise ValueError("provide exactly one of gs and frozen_gs")
        if (gc is None) == (frozen_gc is None):
            raise ValueError("provide exactly one of gc and frozen_gc")
        if (w0 is None) == (frozen_w0 is None):
            raise ValueError("provide exactly one of w0 and frozen_w0")
        self.net = net
        self.gs, self.gc, self.w0 = gs, gc, w0
        self.frozen_gs = None if frozen_gs is None else np.asarray(frozen_gs)
        self.frozen_gc = None if frozen_gc is None else np.asarray(frozen_gc)
        self.frozen_w0 = frozen_w0
        self.initial_in_min = initial_in_min
        self.perception_chunk = perception_chunk

    def named_params(self):
        out = [(f"net.{n}", p) for n, p in self.net.params()]
        for label, rw in (("gs", self.gs), ("gc", self.gc), ("w0", self.w0)):
            if rw is not None:
                out.append((f"{label}.weight", rw.weights))
        return out

    def _perceive(self, stack, eps):
        """Forward the whole image stack; chunk only when graph-free."""
        if T._grad_enabled or len(stack) <= self.perception_chunk:
            probs = self.net.forward_probs(stack)
            chosen, _ = select_batch(probs.data, eps, self.rng)
            return probs, chosen
        rows = []
        for lo in range(0, len(stack), self.perception_chunk):
            rows.append(self.net.forward_probs(
                stack[lo:lo + self.perception_chunk]).data)
        data = np.concatenate(rows, axis=0)
        chosen, _ = select_batch(data, eps, self.rng)
        return T.Tensor(data), chosen

    def forward_batch(self, pairs, labels=None, epoch=None, want_traces=False):
        pairs = np.asarray(pairs)
        if pairs.ndim != 5 or pairs.shape[1] != 2:
            raise ValueError("pairs must be (batch, 2, width, H, W)")
        B, _, K = pairs.shape[:3]
        eps = self.epsilon(epoch)
        with self._graph_ctx():
            # stack perception slots in processing order: least-significant
            # position first, first operand then second within a position
            blocks = [pairs[:, op, K - 1 - step]
                      for step in range(K) for op in (0, 1)]
            probs, chosen = self._perceive(np.concatenate(blocks, axis=0), eps)
            all_conf = T.take_cols(probs, chosen)
            if self.w0 is not None:
                iprobs = self.w0.slice_probs(np.zeros(B, dtype=np.int64))
                carry, _ = select_batch(iprobs.data, eps, self.rng)
                w0_conf = T.take_cols(iprobs, carry)
            else:
                carry = np.full(B, self.frozen_w0, dtype=np.int64)
                w0_conf = None
            x_confs, rule_confs, rule_labs = [], [], []
            labs, syms = [], {}
            preds = np.zeros((B, K), dtype=np.int64)
            carries = np.zeros((B, K), dtype=np.int64)  # carry INTO each step
            for step in range(K):
                sx = chosen[(2 * step) * B:(2 * step + 1) * B]
                sy = chosen[(2 * step + 1) * B:(2 * step + 2) * B]
                x_confs.append(T.rows_slice(all_conf, (2 * step) * B,
                                            (2 * step + 1) * B))
                x_confs.append(T.rows_slice(all_conf, (2 * step + 1) * B,
                                            (2 * step + 2) * B))
                labs += [f"x{step + 1}", f"y{step + 1}"]
                syms[f"x{step + 1}"] = sx
                syms[f"y{step + 1}"] = sy
                carries[:, step] = carry
                key = np.stack([sx, sy, carry], axis=1)
                if self.gs is not None:
                    sprobs = self.gs.slice_probs(self.gs.flat_index(key))
                    digit, _ = select_batch(sprobs.data, eps, self.rng)
                    rule_confs.append(T.take_cols(sprobs, digit))
                    rule_labs.append(f"Gs{step + 1}")
                    syms[f"Gs{step + 1}"] = digit
                else:
                    digit = self.frozen_gs[sx, sy, carry]
                    syms[f"Gs{step + 1}"] = digit
                preds[:, K - 1 - step] = digit
                if step < K - 1:
                    if self.gc is not None:
                        cprobs = self.gc.slice_probs(self.gc.flat_index(key))
                        carry, _ = select_batch(cprobs.data, eps, self.rng)
                        rule_confs.append(T.take_cols(cprobs, carry))
                        rule_labs.append(f"Gc{step + 1}")
                        syms[f"Gc{step + 1}"] = carry
                    else:
                        carry = self.frozen_gc[sx, sy, carry]
                        syms[f"Gc{step + 1}"] = carry
            confs = x_confs + rule_confs
            labs += rule_labs
            syms["W0"] = carries[:, 0]
            if w0_conf is not None and self.initial_in_min:
                confs.append(w0_conf)
                labs.append("W0")
            if labels is not None:
                labels = np.asarray(labels)
                correct = np.all(preds == labels, axis=1)
            else:
                correct = None
            conf_node, t_node, t_star, traces = _finish_batch(
                confs, labs, syms, preds, correct, want_traces, labels)
            loss = None
            if labels is not None and self.mode == "train":
                if t_node is None:
                    raise ValueError("no learnable confidences to supervise")
                loss = _bce(t_node, correct.astype(np.float64))
        return BatchResult(predictions=preds, t_star=t_star, correct=correct,
                           loss=loss, conf_node=conf_node, slot_labels=labs,
                           slot_symbols=syms, traces=traces)


def multidigit_forward(model, xs, ys):
    """Single-pair application on two padded digit image lists (MSB first)."""
    xs, ys = np.asarray(xs), np.asarray(ys)
    if xs.shape != ys.shape:
        raise ValueError("operand image lists differ in length")
    res = model.forward_batch(np.stack([xs, ys])[None], want_traces=True)
    return res.predictions[0].tolist(), res.traces[0]


def train_step(model, inputs, labels, optimizer, epoch=None, want_traces=False):
    """One optimization step; returns (mean loss, batch accuracy, traces)."""
    if model.mode != "train":
        raise ValueError("train_step requires train mode")
    res = model.forward_batch(inputs, labels=labels, epoch=epoch,
                              want_traces=want_traces)
    optimizer.zero_grad()
    T.backward(res.loss)
    optimizer.step()
    return float(res.loss.data), float(res.correct.mean()), res.traces


def one_shot_transfer(model, out_size, seed=0, init_scale=0.0):
    """New DirectModel with a fresh rule table over the same perception nets.

    The nets are shared, not copied, and stay trainable. The new table
    starts at zero weights, i.e. the constant-0 table under greedy ties.
    """
    rule = RuleWeights([n.num_symbols for n in model.nets], out_size,
                       rng=make_rng(seed), init_scale=init_scale)
    fresh = DirectModel(model.nets, rule=rule, policy=model.policy, seed=seed,
                        net_names=model.net_names)
    fresh.mode = model.mode
    return fresh


def dump_traces(path, traces):
    """One JSON record per sample: slots, t*, argmin, prediction, label."""
    with open(path, "w") as fh:
        for tr in traces:
            fh.write(json.dumps({
                "slots": [[lab, int(s), round(float(c), 6)]
                          for lab, s, c in tr.slots],
                "t_star": round(float(tr.t_star), 6),
                "argmin_slot": int(tr.argmin_slot),
                "prediction": tr.prediction if not isinstance(tr.prediction, np.generic)
                else int(tr.prediction),
                "label": tr.label if not isinstance(tr.label, np.generic)
                else int(tr.label),
                "correct": tr.correct,
            }) + "\n")
