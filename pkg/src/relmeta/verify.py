"""Oracle checks for the differentiation engine.

Everything here validates the tape against an independent route: central
finite differences for first derivatives, finite differences *of gradients*
for second derivatives, and closed-form results for the quadratic
meta-update.  The CLI exposes this as ``relmeta verify``; the test suite
calls the same functions.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .models import ConvNet, ModelSpec
from .rng import stream
from .tensor import Tensor, grad, no_grad


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str
    max_err: float = float("nan")
    elapsed_s: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        return f"{status} {self.name}: {self.detail}"


# -- finite differences ----------------------------------------------------

def numeric_grad(f, xs: list[np.ndarray], h: float = 1e-5) -> list[np.ndarray]:
    """Central-difference gradient of scalar f(xs) w.r.t. every entry of xs.

    Perturbs float64 copies elementwise; O(2 * total_size) evaluations."""
    grads = []
    for i, x in enumerate(xs):
        g = np.zeros_like(x, dtype=np.float64)
        flat = x.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            fp = float(f(xs))
            flat[j] = orig - h
            fm = float(f(xs))
            flat[j] = orig
            gflat[j] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """max_i |a_i - b_i| / max(1e-8, ||a||_inf, ||b||_inf)  (scale-aware)."""
    denom = max(1e-8, float(np.max(np.abs(a))), float(np.max(np.abs(b))))
    return float(np.max(np.abs(a - b))) / denom


def gradcheck(build, xs: list[np.ndarray], tol: float = 1e-4, h: float = 1e-5) -> float:
    """Compare tape gradients of scalar build(tensors) against central FD.

    build receives a list of Tensors and must return a scalar Tensor.
    Returns the worst relative error; raises AssertionError above tol."""
    xs = [np.asarray(x, dtype=np.float64) for x in xs]
    leaves = [Tensor(x, requires_grad=True) for x in xs]
    out = build(leaves)
    gs = grad(out, leaves)

    def f_numpy(arrs):
        with no_grad():
            return build([Tensor(a) for a in arrs]).item()

    ngs = numeric_grad(f_numpy, xs, h=h)
    worst = max(rel_err(g.data, ng) for g, ng in zip(gs, ngs))
    if worst > tol:
        raise AssertionError(f"gradcheck failed: rel err {worst:.3e} > {tol:.1e}")
    return worst


# -- per-op first-order sweep ---------------------------------------------

def _project(build_inner, proj: np.ndarray):
    """Wrap an op so the scalar objective is a fixed random projection.

    The projection array is hoisted out of the closure: it must be identical
    across the repeated evaluations finite differencing performs."""
    from . import tensor as T

    c = T.constant(proj)
    return lambda t: T.tsum(build_inner(t) * c)


def _op_cases(rng: np.random.Generator):
    """Yield (name, build, xs) gradcheck instances with randomised shapes."""
    from . import tensor as T

    def shp(*dims):
        return tuple(int(rng.integers(lo, hi + 1)) for lo, hi in dims)

    # arithmetic with broadcasting
    s = shp((1, 4), (1, 5))
    a = rng.standard_normal(s)
    b = rng.standard_normal((1,) + s[1:])
    yield "add", lambda t: T.tsum(t[0] + t[1]), [a, b]
    yield "mul", lambda t: T.tsum(t[0] * t[1]), [a, b.copy()]
    yield "sub_neg", lambda t: T.tsum(t[0] - t[1]), [a.copy(), b.copy()]
    yield "div", lambda t: T.tsum(t[0] / t[1]), [a.copy(), rng.uniform(0.5, 2.0, b.shape)]
    yield "power", lambda t: T.tsum(T.power(t[0], 3.0)), [rng.uniform(0.3, 2.0, shp((2, 6)))]
    yield "sqrt", lambda t: T.tsum(T.sqrt(t[0])), [rng.uniform(0.5, 3.0, shp((2, 6)))]
    yield "exp", lambda t: T.tsum(T.exp(t[0])), [rng.uniform(-1.5, 1.5, shp((2, 6)))]
    yield "log", lambda t: T.tsum(T.log(t[0])), [rng.uniform(0.3, 3.0, shp((2, 6)))]
    # relu away from the kink
    r = rng.standard_normal(shp((3, 8)))
    r[np.abs(r) < 0.05] += 0.1
    yield "relu", _project(lambda t: T.relu(t[0]), rng.standard_normal(r.shape)), [r]

    # linear algebra
    m, k, n = shp((2, 5), (2, 5), (2, 5))
    wa = rng.standard_normal((m, k))
    wb = rng.standard_normal((k, n))
    wc = rng.standard_normal((n,))
    yield "matmul", _project(lambda t: T.matmul(t[0], t[1]), rng.standard_normal((m, n))), [wa, wb]
    yield "matmul_batched", (
        lambda t: T.tsum(T.matmul(t[0], t[1]))
    ), [rng.standard_normal((2, m, k)), wb.copy()]
    yield "dense", lambda t: T.tsum(nn.dense(t[0], t[1], t[2])), [wa.copy(), wb.copy(), wc]

    # structure
    yield "reshape", _project(lambda t: T.reshape(t[0], (m * k,)), rng.standard_normal(m * k)), [wa.copy()]
    yield "transpose", _project(lambda t: T.transpose(t[0], (1, 0)), rng.standard_normal((k, m))), [wa.copy()]
    ax = int(rng.integers(0, 2))
    yield "sum_axis", _project(lambda t: T.tsum(t[0], axis=ax), rng.standard_normal(wa.shape[1 - ax])), [wa.copy()]
    yield "mean", lambda t: T.tmean(t[0]), [wa.copy()]
    yield "broadcast_to", _project(lambda t: T.broadcast_to(t[0], (3, k)), rng.standard_normal((3, k))), [rng.standard_normal((1, k))]

    # spatial
    B, C, H, W = 1, int(rng.integers(1, 3)), int(rng.integers(5, 8)), int(rng.integers(5, 8))
    img = rng.standard_normal((B, C, H, W))
    pads = ((int(rng.integers(0, 2)), int(rng.integers(1, 3))), (int(rng.integers(0, 2)), int(rng.integers(1, 3))))
    yield "pad2d", _project(
        lambda t: T.pad2d(t[0], pads, 0.0),
        rng.standard_normal((B, C, H + sum(pads[0]), W + sum(pads[1]))),
    ), [img]
    yield "crop2d", _project(
        lambda t: T.crop2d(t[0], ((1, 1), (1, 0))), rng.standard_normal((B, C, H - 2, W - 1))
    ), [img.copy()]
    kh = int(rng.integers(2, 4))
    stride = int(rng.integers(1, 3))
    wshape = (B, C, (H - kh) // stride + 1, (W - kh) // stride + 1, kh, kh)
    yield "windows", _project(lambda t: T.windows(t[0], kh, kh, stride), rng.standard_normal(wshape)), [img.copy()]
    yield "overlap_add", _project(
        lambda t: T.overlap_add(t[0], (H, W), stride), rng.standard_normal((B, C, H, W))
    ), [rng.standard_normal(wshape)]
    ho, wo = (H - 1) // 2, (W - 1) // 2
    yield "slice2d", _project(
        lambda t: T.slice2d(t[0], 1, 0, 2, ho, wo), rng.standard_normal((B, C, ho, wo))
    ), [img.copy()]
    yield "unslice2d", _project(
        lambda t: T.unslice2d(t[0], (H, W), 0, 1, 2), rng.standard_normal((B, C, H, W))
    ), [rng.standard_normal((B, C, ho, wo))]

    # selection (tie-free draws)
    sel = rng.standard_normal((3, 5))
    sel += np.arange(5) * 0.01
    idx = rng.integers(0, 5, size=(3,))
    yield "max_last", _project(lambda t: T.max_last(t[0]), rng.standard_normal(3)), [sel]
    yield "maximum", lambda t: T.tsum(T.maximum(t[0], t[1])), [rng.standard_normal((4, 4)), rng.standard_normal((4, 4))]
    yield "gather_last", lambda t: T.tsum(T.gather_last(t[0], idx)), [sel.copy()]
    yield "scatter_last", _project(
        lambda t: T.scatter_last(t[0], idx, 5), rng.standard_normal((3, 5))
    ), [rng.standard_normal((3,))]

    # composites
    C2, F2 = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    k2 = int(rng.integers(2, 4))
    pb, pe = nn.same_pads(k2)
    x2 = rng.standard_normal((1, C2, 6, 6))
    w2 = rng.standard_normal((F2, C2, k2, k2)) * 0.5
    b2 = rng.standard_normal((F2,)) * 0.1
    yield "conv2d", _project(
        lambda t: nn.conv2d(t[0], t[1], t[2], 1, ((pb, pe), (pb, pe))),
        rng.standard_normal((1, F2, 6, 6)),
    ), [x2, w2, b2]
    pool_in = rng.standard_normal((1, C2, 7, 7))
    pool_in += rng.standard_normal(pool_in.shape) * 0.01  # break ties
    yield "maxpool2d", _project(
        lambda t: nn.maxpool2d(t[0], 3, 2, 1), rng.standard_normal((1, C2, 4, 4))
    ), [pool_in]
    xbn = rng.standard_normal((4, C2, 3, 3))
    gam = rng.uniform(0.5, 1.5, C2)
    bet = rng.standard_normal(C2) * 0.2
    yield "batchnorm2d", _project(
        lambda t: nn.batchnorm2d(t[0], t[1], t[2], state=None, training=True),
        rng.standard_normal(xbn.shape),
    ), [xbn, gam, bet]
    labels = rng.integers(0, 3, size=4)
    yield "softmax_cross_entropy", lambda t: nn.softmax_cross_entropy(t[0], labels), [rng.standard_normal((4, 3))]
    # dropout with a frozen mask is a constant elementwise scale
    mask = (rng.random((3, 6)) >= 0.5).astype(np.float64) / 0.5
    yield "dropout_fixed_mask", lambda t: T.tsum(t[0] * T.constant(mask)), [rng.standard_normal((3, 6))]


def check_gradients(cases_per_op: int = 100, tol: float = 1e-4, seed: int = 0) -> list[CheckResult]:
    """Finite-difference sweep: every op, randomised shapes, cases_per_op each."""
    t0 = time.time()
    worst: dict[str, float] = {}
    counts: dict[str, int] = {}
    for case in range(cases_per_op):
        rng = np.random.default_rng(seed * 1_000_003 + case)
        for name, build, xs in _op_cases(rng):
            err = gradcheck(build, xs, tol=tol)
            worst[name] = max(worst.get(name, 0.0), err)
            counts[name] = counts.get(name, 0) + 1
    results = []
    for name in sorted(worst):
        results.append(CheckResult(
            name=f"grad[{name}]", ok=worst[name] <= tol,
            detail=f"{counts[name]} cases, max rel err {worst[name]:.2e}",
            max_err=worst[name], elapsed_s=time.time() - t0,
        ))
    return results


# -- second-order oracles --------------------------------------------------

def quadratic_meta_gradient(alpha: float, theta0: float, k: int) -> float:
    """Tape route: inner loss and outer loss both theta^2 / 2."""
    from . import tensor as T

    th = Tensor(np.array(float(theta0)), requires_grad=True)
    cur = th
    for _ in range(k):
        loss = T.power(cur, 2.0) * 0.5
        (g,) = grad(loss, [cur], create_graph=True)
        cur = cur - alpha * g
    outer = T.power(cur, 2.0) * 0.5
    (meta,) = grad(outer, [th])
    return meta.item()


def quadratic_first_order_gradient(alpha: float, theta0: float, k: int) -> float:
    """First-order route: gradient at the adapted point only (no unrolling)."""
    from . import tensor as T

    th = float(theta0)
    for _ in range(k):
        t = Tensor(np.array(th), requires_grad=True)
        (g,) = grad(T.power(t, 2.0) * 0.5, [t])
        th = th - alpha * float(g.data)
    t = Tensor(np.array(th), requires_grad=True)
    (g,) = grad(T.power(t, 2.0) * 0.5, [t])
    return float(g.data)


def check_quadratic_oracle(tol: float = 1e-8) -> list[CheckResult]:
    """Closed form: meta-grad after k steps is (1 - alpha)^(2k) * theta."""
    t0 = time.time()
    alpha, theta0 = 0.1, 1.0
    results = []
    for k, expect in ((1, (1 - alpha) ** 2 * theta0), (2, (1 - alpha) ** 4 * theta0)):
        got = quadratic_meta_gradient(alpha, theta0, k)
        err = abs(got - expect)
        results.append(CheckResult(
            name=f"meta_grad_quadratic_k{k}", ok=err <= tol,
            detail=f"got {got:.10f}, closed form {expect:.10f}, |diff| {err:.1e}",
            max_err=err, elapsed_s=time.time() - t0,
        ))
    fo = quadratic_first_order_gradient(alpha, theta0, 1)
    fo_expect = (1 - alpha) * theta0
    err = abs(fo - fo_expect)
    results.append(CheckResult(
        name="first_order_quadratic_k1", ok=err <= tol,
        detail=f"got {fo:.10f}, closed form {fo_expect:.10f}, |diff| {err:.1e}",
        max_err=err, elapsed_s=time.time() - t0,
    ))
    return results


def check_second_order_random_quadratics(n: int = 20, tol: float = 1e-8, seed: int = 1) -> CheckResult:
    """Random 1-d quadratics a x^2/2 + b x: meta-grad vs symbolic chain rule."""
    from . import tensor as T

    t0 = time.time()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        a_in, b_in = rng.uniform(0.2, 2.0), rng.uniform(-1, 1)
        a_out, b_out = rng.uniform(0.2, 2.0), rng.uniform(-1, 1)
        alpha = rng.uniform(0.01, 0.3)
        x0 = rng.uniform(-2, 2)
        th = Tensor(np.array(x0), requires_grad=True)
        inner = T.power(th, 2.0) * (a_in / 2) + th * b_in
        (g,) = grad(inner, [th], create_graph=True)
        adapted = th - alpha * g
        outer = T.power(adapted, 2.0) * (a_out / 2) + adapted * b_out
        (meta,) = grad(outer, [th])
        # d outer/d x0 = (a_out x1 + b_out) * (1 - alpha a_in)
        x1 = x0 - alpha * (a_in * x0 + b_in)
        expect = (a_out * x1 + b_out) * (1 - alpha * a_in)
        worst = max(worst, abs(meta.item() - expect))
    return CheckResult(
        name="meta_grad_random_quadratics", ok=worst <= tol,
        detail=f"{n} cases, max |diff| {worst:.1e}", max_err=worst,
        elapsed_s=time.time() - t0,
    )


def check_hessian_vector(tol: float = 1e-6, seed: int = 2) -> CheckResult:
    """grad-of-grad on a dense MLP head vs finite differences of the gradient."""
    from . import tensor as T

    t0 = time.time()
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((4, 3))
    x = rng.standard_normal((5, 4))
    v = rng.standard_normal((4, 3))

    def loss_of(wt: Tensor) -> Tensor:
        h = T.matmul(Tensor(x), wt)
        return T.tmean(T.power(T.exp(h * 0.3), 2.0))

    wt = Tensor(w, requires_grad=True)
    (g,) = grad(loss_of(wt), [wt], create_graph=True)
    gv = T.tsum(g * T.constant(v))
    (hv,) = grad(gv, [wt])

    h = 1e-5
    wp = Tensor(w + h * v, requires_grad=True)
    wm = Tensor(w - h * v, requires_grad=True)
    (gp,) = grad(loss_of(wp), [wp])
    (gm,) = grad(loss_of(wm), [wm])
    hv_fd = (gp.data - gm.data) / (2 * h)
    err = rel_err(hv.data, hv_fd)
    return CheckResult(
        name="hessian_vector_mlp", ok=err <= tol,
        detail=f"rel err vs FD-of-grad {err:.2e}", max_err=err,
        elapsed_s=time.time() - t0,
    )


def check_cnn_meta_gradient(tol: float = 1e-3, seed: int = 3) -> CheckResult:
    """Meta-gradient of a small conv net vs finite differences of the

    *unrolled* query loss.  Probes 40 random weight coordinates in float64."""
    t0 = time.time()
    rng = np.random.default_rng(seed)
    spec = ModelSpec(depth=2, canvas=8, channels=1, fc_width=8, n_fc=1, dropout=0.0)
    model = ConvNet.create(spec, rng)
    # float64 throughout for a clean FD comparison
    model.params = {k: v.astype(np.float64) for k, v in model.params.items()}
    xs = rng.standard_normal((4, 1, 8, 8))
    ys = np.array([0, 1, 0, 1])
    xq = rng.standard_normal((2, 1, 8, 8))
    yq = np.array([1, 0])
    alpha = 0.05
    names = list(model.params)

    def unrolled_query_loss(pdict: dict[str, np.ndarray]) -> float:
        # run the inner step and evaluate the query loss; only the first-order
        # gradient is needed here, the unroll is differenced numerically
        params = {k: Tensor(v, requires_grad=True) for k, v in pdict.items()}
        ls = nn.softmax_cross_entropy(model.forward(xs, params, bn_training=True), ys)
        gs = grad(ls, [params[n] for n in names])
        adapted = {n: Tensor(params[n].data - alpha * g.data) for n, g in zip(names, gs)}
        with no_grad():
            lq = nn.softmax_cross_entropy(model.forward(xq, adapted, bn_training=True), yq)
        return lq.item()

    # tape route
    params = {k: Tensor(v, requires_grad=True) for k, v in model.params.items()}
    ls = nn.softmax_cross_entropy(model.forward(xs, params, bn_training=True), ys)
    gs = grad(ls, [params[n] for n in names], create_graph=True)
    adapted = {n: params[n] - alpha * g for n, g in zip(names, gs)}
    lq = nn.softmax_cross_entropy(model.forward(xq, adapted, bn_training=True), yq)
    metag = grad(lq, [params[n] for n in names])
    meta = {n: g.data for n, g in zip(names, metag)}

    h = 1e-6
    worst = 0.0
    probes = []
    for _ in range(40):
        n = names[int(rng.integers(len(names)))]
        idx = tuple(int(rng.integers(s)) for s in model.params[n].shape)
        base = {k: v.copy() for k, v in model.params.items()}
        base[n][idx] += h
        fp = unrolled_query_loss(base)
        base[n][idx] -= 2 * h
        fm = unrolled_query_loss(base)
        fd = (fp - fm) / (2 * h)
        got = float(meta[n][idx])
        scale = max(1e-6, abs(fd), abs(got))
        probes.append(abs(got - fd) / scale)
        worst = max(worst, probes[-1])
    return CheckResult(
        name="cnn_meta_gradient_vs_fd", ok=worst <= tol,
        detail=f"40 coord probes, max rel err {worst:.2e}", max_err=worst,
        elapsed_s=time.time() - t0,
    )


# -- suite entry -----------------------------------------------------------

def run_verification(cases_per_op: int = 100, fast: bool = False) -> tuple[list[CheckResult], bool]:
    """The full oracle suite; returns (results, all_ok)."""
    n = 10 if fast else cases_per_op
    results: list[CheckResult] = []
    results.extend(check_gradients(cases_per_op=n))
    results.extend(check_quadratic_oracle())
    results.append(check_second_order_random_quadratics())
    results.append(check_hessian_vector())
    results.append(check_cnn_meta_gradient())
    return results, all(r.ok for r in results)
