"""Acceptance criteria, one recorded pass/fail line each.

Run with ``pytest tests/test_acceptance.py -rA``; the lines are printed in
an "acceptance criteria" section at the end of the session.  The MNIST
criteria need the raw IDX files in ``$DNS_MNIST_DIR``; LeNet-5 also needs
``DNS_ACCEPT_LENET5=1`` because it takes well over an hour on one core.
"""

import itertools
import os
import time
from fractions import Fraction

import numpy as np
import pytest

from dnsurgery.cli import builtin_config
from dnsurgery.data import gen_xor, load_mnist, load_mnist_idx, minibatches, xor_split
from dnsurgery.errors import FormatError
from dnsurgery.linalg import KernelSpec, im2col
from dnsurgery.modelio import compression_report, export_sparse, load_dense, save_dense
from dnsurgery.network import (
    MODELS, Network, backward, evaluate, forward, fully_connected, init_network, sigmoid_xent_loss,
    xor_specs,
)
from dnsurgery.params import MaskedParams, ThresholdSpec
from dnsurgery.surgery import (
    SurgeryConfig, TrainState, TriggerSchedule, parse_config, run_surgery, surgery_step,
    train_reference, trigger_probability, update_mask,
)

from conftest import MNIST_DIR, have_mnist
from helpers import (
    GOLDEN_IMAGES, GOLDEN_LABELS, brute_conv, finite_difference_grads, golden_pixels,
    max_rel_error, random_masks, random_small_net, unmasked_clone,
)

PROPERTY_BUDGET_S = 120.0
_property_seconds = []


def _reference_and_surgery(name, train, test):
    ref_cfg = parse_config(builtin_config(f"{name}-reference"))
    cfg = parse_config(builtin_config(f"{name}-surgery"))
    ref = train_reference(init_network(MODELS[ref_cfg.model](), ref_cfg.seed), train, ref_cfg)
    ref_err = evaluate_error(ref, test)
    net, report = run_surgery(ref, train, cfg)
    return ref_cfg, cfg, ref_err, evaluate_error(net, test), report


def evaluate_error(net, ds):
    return evaluate(net, ds.features, ds.labels)


# --- 1: noisy XOR ---------------------------------------------------------

@pytest.mark.slow
def test_c1_xor(verdict):
    ref_cfg = parse_config(builtin_config("xor-reference"))
    train, test = xor_split(ref_cfg.xor_samples, ref_cfg.xor_noise, ref_cfg.xor_seed)
    ref_cfg, cfg, ref_err, err, report = _reference_and_surgery("xor", train, test)
    pruned = report.total - report.kept
    ok = (len(train) == len(test) == 10000 and report.total == 21 and ref_cfg.max_iter == 100000
          and cfg.max_iter == 150000 and ref_err <= 0.01 and pruned / 21 >= 0.35 and err <= 0.01)
    verdict("C1 XOR 2-5-1", ok,
            f"reference error {ref_err:.4f} (<= 0.0100), pruned {pruned}/21 = {pruned / 21:.1%} (>= 35%), "
            f"surgery error {err:.4f} (<= 0.0100)")


# --- 2 and 3: MNIST -------------------------------------------------------

def _mnist_criterion(verdict, label, name, min_rate, max_ref_err=None):
    train, test = load_mnist(MNIST_DIR, "train"), load_mnist(MNIST_DIR, "test")
    ref_cfg, cfg, ref_err, err, report = _reference_and_surgery(name, train, test)
    ok = report.rate >= min_rate and err <= ref_err + 0.003
    limit = ""
    if max_ref_err is not None:
        ok = ok and ref_err <= max_ref_err and ref_cfg.max_iter == 10000 and cfg.max_iter == 25000
        limit = f" (<= {max_ref_err:.4f})"
    verdict(label, ok,
            f"reference error {ref_err:.4f}{limit}, compression {float(report.rate):.1f}x (>= {min_rate}x), "
            f"surgery error {err:.4f} (<= {ref_err + 0.003:.4f})")


@pytest.mark.slow
def test_c2_lenet_300_100(verdict):
    if not have_mnist():
        verdict.skip("C2 LeNet-300-100", f"MNIST IDX files not found in {MNIST_DIR}")
    _mnist_criterion(verdict, "C2 LeNet-300-100", "lenet-300-100", 10, max_ref_err=0.03)


@pytest.mark.slow
def test_c3_lenet5(verdict):
    if os.environ.get("DNS_ACCEPT_LENET5") != "1":
        verdict.skip("C3 LeNet-5", "optional long run; set DNS_ACCEPT_LENET5=1 to enable")
    if not have_mnist():
        verdict.skip("C3 LeNet-5", f"MNIST IDX files not found in {MNIST_DIR}")
    _mnist_criterion(verdict, "C3 LeNet-5", "lenet-5", 5)


def test_c4_alexnet(verdict):
    verdict.skip("C4 AlexNet", "declared not reproducible at desk scale; covered by the C5 property suite")


# --- 5: property suite ----------------------------------------------------

@pytest.fixture
def timed():
    start = time.perf_counter()
    yield
    _property_seconds.append(time.perf_counter() - start)


def test_c5_gradients(verdict, timed):
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(20):
        net = random_masks(random_small_net(rng), rng)
        x = rng.standard_normal((3, net.input_dim))
        y = rng.integers(0, net.n_classes, 3)
        grads = backward(net, forward(net, x, y), y)
        for g, (gw, gb) in zip(grads, finite_difference_grads(net, x, y)):
            worst = max(worst, max_rel_error(g.weight, gw))
            if gb is not None:
                worst = max(worst, max_rel_error(g.bias, gb))
    verdict("C5 finite-difference gradients", worst < 1e-6, f"max relative error {worst:.2e} (< 1e-6), 20 nets")


def test_c5_masking(verdict, timed):
    rng = np.random.default_rng(12)
    failures = 0
    for _ in range(100):
        net = random_masks(random_small_net(rng), rng)
        x = rng.standard_normal((4, net.input_dim))
        y = np.zeros(4, dtype=np.int64)
        out = forward(net, x, y).inputs[-1]
        same = np.array_equal(out, forward(unmasked_clone(net), x, y).inputs[-1])
        poked = net.copy()
        for p in poked.params:
            p.w[p.t == 0.0] += rng.standard_normal(int((p.t == 0.0).sum())) * 100
        inert = np.array_equal(out, forward(poked, x, y).inputs[-1])
        failures += not (same and inert)
    verdict("C5 masking equivalence and inertness", failures == 0, f"{100 - failures}/100 cases")


def test_c5_update_mask(verdict, timed):
    rng = np.random.default_rng(13)
    failures = 0
    for _ in range(1000):
        shape = tuple(rng.integers(1, 9, size=2))
        w = rng.standard_normal(shape) * rng.uniform(0.01, 3)
        t = (rng.random(shape) < 0.5).astype(float)
        a = rng.uniform(0, 1)
        b = a + rng.uniform(0, 0.5)
        p = update_mask(MaskedParams(w.copy(), t.copy(), ThresholdSpec(a=a, b=b, frozen=True)))
        mag = np.abs(w)
        band = (mag >= a) & (mag < b)
        once = p.t.copy()
        ok = (np.all(p.t[mag < a] == 0) and np.all(p.t[mag >= b] == 1)
              and np.array_equal(p.t[band], t[band]) and np.array_equal(p.w, w)
              and np.array_equal(update_mask(p).t, once))
        failures += not ok
    verdict("C5 update_mask post-conditions", failures == 0, f"{1000 - failures}/1000 matrices")


def test_c5_splice_recovery(verdict, timed):
    p = MaskedParams(np.array([[0.05]]), np.array([[0.0]]), ThresholdSpec(a=0.1, b=0.12, frozen=True))
    net = Network([fully_connected("fc1", 1, 1), sigmoid_xent_loss()], [p], [np.zeros(1)])
    cfg = SurgeryConfig(base_lr=0.05, max_iter=1000, batch_size=1, trigger=TriggerSchedule(0.0, 1.0))
    state = TrainState.start(cfg, net)
    x, y = np.array([[1.0]]), np.array([1])
    while net.params[0].t[0, 0] == 0.0 and state.iter < 1000:
        surgery_step(net, cfg, state, x, y)
    w = net.params[0].w[0, 0]
    rejoined = forward(net, x, y).inputs[-1][0, 0] == w + net.biases[0][0]
    ok = net.params[0].t[0, 0] == 1.0 and w >= 0.12 and rejoined
    verdict("C5 splice recovery", ok, f"weight 0.05 -> {w:.4f} after {state.iter} steps, mask {net.params[0].t[0, 0]:.0f}")


def test_c5_trigger(verdict, timed):
    rng = np.random.default_rng(14)
    failures = 0
    for _ in range(200):
        sched = TriggerSchedule(float(rng.uniform(0, 1e-2)), float(rng.uniform(0, 3)), int(rng.integers(0, 5000)))
        its = np.sort(rng.integers(0, 10000, 50))
        vals = [trigger_probability(sched, int(i)) for i in its]
        ok = (trigger_probability(sched, 0) == (1.0 if sched.stop_iter > 0 else 0.0)
              and all(b <= a for a, b in zip(vals, vals[1:]))
              and all(v == 0.0 for i, v in zip(its, vals) if i >= sched.stop_iter))
        failures += not ok
    verdict("C5 trigger schedule", failures == 0, f"{200 - failures}/200 random schedules")


def test_c5_zero_trigger_is_sgd(verdict, timed):
    ds = gen_xor(200, 0.1, 3)
    net = init_network(xor_specs(), 4)
    cfg = SurgeryConfig(base_lr=0.5, max_iter=200, batch_size=16, seed=5, trigger=TriggerSchedule(stop_iter=0))
    out, _ = run_surgery(net, ds, cfg)
    ref = net.copy()
    for x, y in itertools.islice(minibatches(ds, cfg.batch_size, cfg.seed), cfg.max_iter):
        grads = backward(ref, forward(ref, x, y), y)
        for p, b, g in zip(ref.params, ref.biases, grads):
            p.w -= cfg.base_lr * g.weight
            b -= cfg.base_lr * g.bias
    same = all(p.w.tobytes() == q.w.tobytes() for p, q in zip(out.params, ref.params))
    same = same and all(p.tobytes() == q.tobytes() for p, q in zip(out.biases, ref.biases))
    verdict("C5 zero-trigger surgery equals SGD", same, "bitwise identical after 200 steps")


def test_c5_model_io(verdict, timed):
    rng = np.random.default_rng(15)
    net = random_masks(init_network(MODELS["lenet-300-100"](), 3), rng, keep=0.1)
    back = load_dense(save_dense(net))
    dense_ok = all(p.w.tobytes() == q.w.tobytes() and p.t.tobytes() == q.t.tobytes()
                   for p, q in zip(net.params, back.params))
    sparse = export_sparse(net)
    sparse_ok = all(np.array_equal(m.to_dense(), p.w * p.t) for m, p in zip(sparse.weights, net.params))
    report = compression_report(net)
    kept = sum(int(p.t.sum()) + (b.size if b is not None else 0) for p, b in zip(net.params, net.biases))
    report_ok = report.total == 266610 and report.kept == kept and report.rate == Fraction(266610, kept)
    verdict("C5 model io and report", dense_ok and sparse_ok and report_ok,
            f"dense round trip {dense_ok}, sparse reconstruction {sparse_ok}, "
            f"report {report.total}/{report.kept} = {float(report.rate):.4f}x exact {report_ok}")


def test_c5_im2col(verdict, timed):
    rng = np.random.default_rng(16)
    worst = 0.0
    for c, oc, k, stride, pad in [(1, 1, 3, 1, 0), (2, 3, 3, 1, 1), (3, 2, 2, 2, 0), (1, 20, 5, 1, 0), (2, 2, 3, 2, 1)]:
        spec = KernelSpec(c, oc, k, k, stride, pad)
        img = rng.standard_normal((8, 8, c))
        kern = rng.standard_normal((oc, c, k, k))
        lowered = kern.reshape(oc, -1) @ im2col(img, spec)
        ref = brute_conv(img, kern, spec).reshape(oc, -1)
        worst = max(worst, float(np.max(np.abs(lowered - ref)) / np.max(np.abs(ref))))
    verdict("C5 im2col convolution", worst < 1e-12, f"max relative error {worst:.2e} (< 1e-12)")


def test_c5_idx(verdict, timed):
    ds = load_mnist_idx(GOLDEN_IMAGES, GOLDEN_LABELS)
    parsed = np.array_equal(ds.features, golden_pixels()) and ds.labels.tolist() == [7, 3]
    try:
        load_mnist_idx(GOLDEN_LABELS, GOLDEN_LABELS)
        rejected = False
    except FormatError:
        rejected = True
    verdict("C5 IDX golden fixture", parsed and rejected, f"fixture exact {parsed}, wrong magic rejected {rejected}")


def test_c5_runtime(verdict):
    total = sum(_property_seconds)
    verdict("C5 property suite runtime", len(_property_seconds) == 9 and total < PROPERTY_BUDGET_S,
            f"{total:.1f} s over {len(_property_seconds)} checks (< {PROPERTY_BUDGET_S:.0f} s)")
