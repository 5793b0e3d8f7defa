"""Ablation sweeps and the runtime property-check suite.

The sweep runner measures the stability-plasticity trade-off: one knob of
the projection config is varied while the benchmark geometry stays fixed,
so metric movement is attributable to the knob alone.

The property checks re-verify, on a built package at runtime, the
invariants the test suite pins at development time: SVD reconstruction
and factor orthogonality, analytic gradients against central finite
differences, projected-gradient orthogonality to stored features on
rank-deficient buffers, projector idempotence, the single-step size
scaling signature of each paradigm, and the metric formulas against
direct oracles.  `verify_all` runs every check and reports one named
pass/fail row per property.
"""

import warnings
from dataclasses import replace

import numpy as np

from . import backbone as bb
from . import data as dm
from . import linalg
from . import metrics as mt
from . import pet as pm
from . import projection as pj
from . import rng as rng_mod
from . import trainer as tr


def site_basis_total(basis_sizes_entry: dict) -> int:
    """Total raw-site basis columns, excluding the merged prompt key."""
    return sum(v for k, v in basis_sizes_entry.items() if k != "prompt")


def ablation_sweep(model_cfg, spec, paradigm, base_cfg, key, values, seeds,
                   data_seed=0) -> list[dict]:
    """Sweep one projection knob over seeds; one summary row per value.

    The tokenizer and task stream are fixed by ``data_seed`` so all runs
    see the same benchmark; per-run seeds vary only initialization and
    batch order.  Rows report seed-mean avg_acc / forgetting / new_acc
    and the seed-mean raw basis column count after the final rebuild.
    """
    if key not in ("epsilon", "beta"):
        raise ValueError(f"sweep key must be 'epsilon' or 'beta', got {key!r}")
    if len(values) < 2:
        raise ValueError("sweep needs at least two values")
    if len(seeds) < 1:
        raise ValueError("sweep needs at least one seed")
    tok = dm.make_tokenizer(spec.feature_dim, model_cfg.seq_len, model_cfg.dim, data_seed)
    stream = dm.gen_stream(spec, tok, data_seed)
    rows = []
    for value in values:
        per_seed = []
        for seed in seeds:
            cfg = replace(base_cfg, seed=seed, proj=replace(base_cfg.proj, **{key: value}))
            matrix, info = tr.continual_run(stream, model_cfg, paradigm, cfg)
            summary = mt.summarize(matrix)
            per_seed.append({
                "seed": seed,
                "avg_acc": summary["avg_acc"],
                "forgetting": summary["forgetting"],
                "new_acc": summary["new_acc"],
                "basis_columns": site_basis_total(info["basis_sizes"][-1]),
            })
        rows.append({
            key: value,
            "avg_acc": float(np.mean([r["avg_acc"] for r in per_seed])),
            "forgetting": float(np.mean([r["forgetting"] for r in per_seed])),
            "new_acc": float(np.mean([r["new_acc"] for r in per_seed])),
            "basis_columns": float(np.mean([r["basis_columns"] for r in per_seed])),
            "per_seed": per_seed,
        })
    return rows


# ------------------------------------------------------------ svd checks


SHAPE_CLASSES = {
    "square": (10, 10, None),
    "tall": (12, 8, None),
    "wide": (8, 12, None),
    "tall_rank_deficient": (12, 8, 4),
    "wide_rank_deficient": (8, 12, 5),
}


def _random_matrix(rng, m, n, rank=None):
    if rank is None:
        return rng.normal(size=(m, n))
    return rng.normal(size=(m, rank)) @ rng.normal(size=(rank, n))


def svd_suite(seeds_per_class: int = 100) -> dict:
    """Worst-case SVD errors over seeded matrices in every shape class.

    Returns the max relative reconstruction error, the max factor
    orthogonality defect, and the max row-space-projector disagreement
    with the independent LAPACK factorization.
    """
    worst = {"reconstruction": 0.0, "orthogonality": 0.0, "projector": 0.0}
    for name, (m, n, rank) in sorted(SHAPE_CLASSES.items()):
        k = min(m, n)
        for seed in range(seeds_per_class):
            rng = np.random.default_rng(1000 + seed)
            a = _random_matrix(rng, m, n, rank)
            res = linalg.svd(a)
            scale = max(float(np.linalg.norm(a)), 1e-30)
            recon = res.u @ np.diag(res.s) @ res.vt
            worst["reconstruction"] = max(
                worst["reconstruction"], float(np.linalg.norm(recon - a)) / scale
            )
            worst["orthogonality"] = max(
                worst["orthogonality"],
                float(np.linalg.norm(res.u.T @ res.u - np.eye(k))),
                float(np.linalg.norm(res.vt @ res.vt.T - np.eye(k))),
            )
            v1 = res.vt[res.s > 1e-10 * res.s[0]].T if res.s[0] > 0 else res.vt.T[:, :0]
            mine = np.eye(n) - v1 @ v1.T
            _, s_ref, vt_ref = np.linalg.svd(a, full_matrices=False)
            top = s_ref[0] if s_ref.size else 0.0
            v1_ref = vt_ref[s_ref > 1e-10 * top].T if top > 0 else vt_ref.T[:, :0]
            ref = np.eye(n) - v1_ref @ v1_ref.T
            worst["projector"] = max(worst["projector"], float(np.linalg.norm(mine - ref)))
    return worst


def orthonormalize_suite(trials: int = 50) -> float:
    """Max defect of orthonormalize over random spans: columns must come
    out orthonormal, keep the input span, and match the LAPACK rank."""
    worst = 0.0
    for seed in range(trials):
        rng = np.random.default_rng(2000 + seed)
        n, k = int(rng.integers(4, 12)), int(rng.integers(1, 6))
        a = _random_matrix(rng, n, k, rank=min(k, int(rng.integers(1, k + 1))))
        q = linalg.orthonormalize(a)
        if q.shape[1] != np.linalg.matrix_rank(a, tol=1e-8):
            return float("inf")
        worst = max(worst, float(np.linalg.norm(q.T @ q - np.eye(q.shape[1]))))
        proj = q @ q.T
        for j in range(k):
            col = a[:, j]
            worst = max(
                worst,
                float(np.linalg.norm(proj @ col - col)) / max(float(np.linalg.norm(col)), 1e-30),
            )
    return worst


# ------------------------------------------------------- gradient checks


GRADCHECK_MODEL = bb.TransformerConfig(
    dim=16, depth=2, heads=2, mlp_ratio=2.0, seq_len=3,
    num_classes=3, prompt_len=3, prefix_len=2, rank=3,
)


def gradient_check(paradigm: str, h: float = 1e-5) -> float:
    """Max relative error of the analytic gradient against central finite
    differences, over every coordinate of every trainable tensor."""
    cfg = GRADCHECK_MODEL
    w = bb.init_backbone(cfg, rng_mod.sub_seed(3, "backbone"))
    pet = pm.init_pet(cfg, paradigm, rng_mod.sub_seed(3, "pet"))
    head = w.classifier.copy()
    x = np.random.default_rng(3).normal(0.0, 1.0, size=(cfg.seq_len, cfg.dim))
    mask = np.ones(cfg.num_classes, dtype=bool)
    label = 1

    def loss_at() -> float:
        logits, _ = bb.forward(w, pet, x, head=head, need_trace=False)
        loss, _ = tr.masked_cross_entropy(logits, mask, label)
        return loss

    logits, trace = bb.forward(w, pet, x, head=head)
    _, dlogits = tr.masked_cross_entropy(logits, mask, label)
    grads, head_grad = bb.backward(trace, w, pet, dlogits, head=head)
    tensors = [(name, pet.params[name], grads[name]) for name in sorted(grads)]
    tensors.append(("head", head, head_grad))
    worst = 0.0
    for _, arr, analytic in tensors:
        flat = arr.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            pet.bump()
            up = loss_at()
            flat[i] = keep - h
            pet.bump()
            down = loss_at()
            flat[i] = keep
            pet.bump()
            fd = (up - down) / (2.0 * h)
            an = float(analytic.reshape(-1)[i])
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-8))
    return worst


# --------------------------------------------------- orthogonality checks


ORTHO_MODEL = bb.TransformerConfig(
    dim=16, depth=2, heads=2, mlp_ratio=2.0, seq_len=4,
    num_classes=4, prompt_len=4, prefix_len=4, rank=12,
)
ORTHO_DATA = dm.ScenarioSpec(
    scenario="cil", tasks=2, classes_per_task=2, samples_per_class=20,
    feature_dim=64, noise=0.0, separation=4.0,
)


def _mean_batch_grads(w, pet, head, xs, ys, seen):
    mask = tr.logit_mask("cil", "train", head.shape[1], seen_classes=seen)
    gsum = {k: np.zeros_like(v) for k, v in pet.params.items()}
    for x, y in zip(xs, ys):
        logits, trace = bb.forward(w, pet, x, head=head)
        _, dlogits = tr.masked_cross_entropy(logits, mask, int(y))
        grads, _ = bb.backward(trace, w, pet, dlogits, head=head)
        for k in gsum:
            gsum[k] += grads[k]
    return {k: v / len(xs) for k, v in gsum.items()}


def _rel_overlap(rows: np.ndarray, grad: np.ndarray, side: str) -> float:
    """|stored rows . projected step| relative to both norms; 0 when either
    factor is all zero (an empty basis projects every gradient to zero)."""
    prod = rows @ (grad.T if side == "right" else grad)
    denom = float(np.linalg.norm(rows)) * float(np.linalg.norm(grad))
    return float(np.linalg.norm(prod)) / denom if denom > 0 else 0.0


def orthogonality_check(paradigm: str, epsilon: float = 1e-10) -> dict:
    """Exact-null projection on rank-deficient buffers.

    Noise-free class clusters keep every site buffer rank deficient, so at
    a tiny threshold the basis spans the exact null space and every stored
    feature row must be orthogonal to the projected gradient of the factor
    that consumes it.  Returns the worst relative overlap across sites and
    the worst projector idempotence defect.
    """
    cfg = ORTHO_MODEL
    tok = dm.make_tokenizer(ORTHO_DATA.feature_dim, cfg.seq_len, cfg.dim, 5)
    stream = dm.gen_stream(ORTHO_DATA, tok, 5)
    w = bb.init_backbone(cfg, rng_mod.sub_seed(5, "backbone"))
    pet = pm.init_pet(cfg, paradigm, rng_mod.sub_seed(5, "pet"))
    head = w.classifier.copy()
    proj_cfg = pj.ProjectionConfig(epsilon=epsilon, beta=0.3, sample_count=8, buffer_cap=256)
    buffers = tr.init_buffers(paradigm, cfg, proj_cfg)
    tr.update_buffers(w, pet, stream[0].train_x[:8], buffers, 0, np.random.default_rng(5))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", pj.EmptyBasisWarning)
        bases = {site: pj.build_basis(buffers[site], epsilon, "right" if paradigm in ("prompt", "prefix") else "left")
                 for site in sorted(buffers)}
    grads = _mean_batch_grads(w, pet, head, stream[1].train_x[:8], stream[1].train_y[:8], seen=4)

    overlaps = []
    if paradigm == "prompt":
        g = pj.project_prompt_grad(grads["prompt"], bases["embed"])
        overlaps.append(_rel_overlap(buffers["embed"].rows, g, "right"))
    elif paradigm == "prefix":
        for i in range(cfg.depth):
            gk, gv = pj.project_prefix_grads(
                grads[f"prefix_k.{i}"], grads[f"prefix_v.{i}"], bases[f"attn_in.{i}"]
            )
            rows = buffers[f"attn_in.{i}"].rows
            overlaps.append(_rel_overlap(rows, gk, "right"))
            overlaps.append(_rel_overlap(rows, gv, "right"))
    elif paradigm == "adapter":
        for i in range(cfg.depth):
            gd, gu = pj.project_factor_grads(
                grads[f"adapter_down.{i}"], grads[f"adapter_up.{i}"],
                bases[f"mlp_in.{i}"], bases[f"adapter_mid.{i}"],
            )
            overlaps.append(_rel_overlap(buffers[f"mlp_in.{i}"].rows, gd, "left"))
            overlaps.append(_rel_overlap(buffers[f"adapter_mid.{i}"].rows, gu, "left"))
    else:
        for i in range(cfg.depth):
            for slot in ("q", "v"):
                gd, gu = pj.project_factor_grads(
                    grads[f"lora_{slot}_down.{i}"], grads[f"lora_{slot}_up.{i}"],
                    bases[f"attn_in.{i}"], bases[f"lora_{slot}_mid.{i}"],
                )
                overlaps.append(_rel_overlap(buffers[f"attn_in.{i}"].rows, gd, "left"))
                overlaps.append(_rel_overlap(buffers[f"lora_{slot}_mid.{i}"].rows, gu, "left"))

    idem = 0.0
    for basis in bases.values():
        p = basis.projector()
        idem = max(idem, float(np.linalg.norm(p @ p - p)))
    return {"max_overlap": max(overlaps), "idempotence": idem}


# ----------------------------------------------------- step-size scaling


PROBE_MODEL = bb.TransformerConfig(
    dim=16, depth=2, heads=2, mlp_ratio=2.0, seq_len=4,
    num_classes=4, prompt_len=4, prefix_len=4, rank=4,
)
PROBE_DATA = dm.ScenarioSpec(
    scenario="cil", tasks=2, classes_per_task=2, samples_per_class=100,
    feature_dim=64, noise=0.01, separation=4.0,
)
PROBE_PROJ = pj.ProjectionConfig(epsilon=0.02, beta=0.3, sample_count=32)

# Measurement step per (paradigm, arm), chosen inside each arm's
# leading-order window.  Unprojected drift has an O(1) first-order
# coefficient, so small steps keep it clear of softmax saturation.  For
# the bypass paradigms the projected step only reaches old inputs through
# the tiny leak the threshold admits, and its second-order term needs a
# large step before it dominates that leak.  The token-row paradigms keep
# a first-order path at any step size (the value slot and the query/key
# weighting sit between the stored rows and the step), so their projected
# ratio stays near 2; they are measured at their own pre-saturation step.
PROBE_ETAS = {
    "prompt": (0.1, 0.001),
    "prefix": (1.0, 0.1),
    "adapter": (250.0, 0.1),
    "lora": (175.0, 0.03),
}


def _probe_state(paradigm: str):
    """Train the first task, build bases from it, stage a second-task batch."""
    cfg = PROBE_MODEL
    tok = dm.make_tokenizer(PROBE_DATA.feature_dim, cfg.seq_len, cfg.dim, 0)
    stream = dm.gen_stream(PROBE_DATA, tok, 0)
    w = bb.init_backbone(cfg, rng_mod.sub_seed(0, "backbone"))
    pet = pm.init_pet(cfg, paradigm, rng_mod.sub_seed(0, "pet"))
    head = w.classifier.copy()
    train_cfg = tr.TrainConfig(
        epochs=3, batch_size=16, lr=0.05, optimizer="sgd", scenario="cil",
        seed=0, projection=True, proj=PROBE_PROJ,
    )
    tr.train_task(w, pet, head, stream[0], train_cfg, bases=None,
                  seen_classes=2, shuffle_rng=np.random.default_rng(0))
    buffers = tr.init_buffers(paradigm, cfg, PROBE_PROJ)
    tr.update_buffers(w, pet, stream[0].train_x[:32], buffers, 0, np.random.default_rng(1))
    with warnings.catch_warnings():
        # A full-rank bottleneck buffer is a legitimate operating point
        # here; the affected factor simply stays frozen.
        warnings.simplefilter("ignore", pj.EmptyBasisWarning)
        bases = tr.rebuild_bases(pet, buffers, PROBE_PROJ, cfg)
    probes = stream[0].test_x[:16]
    batch = (stream[1].train_x[:16], stream[1].train_y[:16])
    return w, pet, head, bases, probes, batch


def _drift_after_step(w, pet, head, bases, batch, probes, eta, project) -> float:
    """Probe-logit movement from one gradient step on the paradigm tensors.

    The head is held fixed: the first-order guarantee concerns the
    inserted tensors, which are the only ones the projector touches.
    """
    base = np.stack([bb.forward(w, pet, x, head=head, need_trace=False)[0] for x in probes])
    grads = _mean_batch_grads(w, pet, head, batch[0], batch[1], seen=head.shape[1])
    if project:
        grads = tr.project_grads(pet, grads, bases, w.cfg.depth)
    stepped = pm.PetState(
        paradigm=pet.paradigm,
        params={k: v - eta * grads[k] for k, v in pet.params.items()},
        lora_scale=pet.lora_scale,
    )
    after = np.stack([bb.forward(w, stepped, x, head=head, need_trace=False)[0] for x in probes])
    return float(np.linalg.norm(after - base))


def eta_scaling_probe(paradigm: str) -> dict:
    """Halving ratios of single-step probe drift, projected and not.

    A ratio near 4 means the drift is second order in the step size; near
    2 means first order.  Also reports both arms' drift at the projected
    arm's step so their magnitudes can be compared directly.
    """
    pm.check_paradigm(paradigm)
    w, pet, head, bases, probes, batch = _probe_state(paradigm)
    eta_p, eta_u = PROBE_ETAS[paradigm]
    d_proj = _drift_after_step(w, pet, head, bases, batch, probes, eta_p, True)
    d_proj_half = _drift_after_step(w, pet, head, bases, batch, probes, eta_p / 2, True)
    d_unproj = _drift_after_step(w, pet, head, bases, batch, probes, eta_u, False)
    d_unproj_half = _drift_after_step(w, pet, head, bases, batch, probes, eta_u / 2, False)
    d_unproj_matched = _drift_after_step(w, pet, head, bases, batch, probes, eta_p, False)
    return {
        "proj_eta": eta_p,
        "unproj_eta": eta_u,
        "proj_ratio": d_proj / d_proj_half if d_proj_half > 0 else float("nan"),
        "unproj_ratio": d_unproj / d_unproj_half if d_unproj_half > 0 else float("nan"),
        "proj_drift": d_proj,
        "unproj_drift_matched": d_unproj_matched,
    }


# ------------------------------------------------------------ metrics


def metrics_oracle_check(trials: int = 1000) -> dict:
    """Compare the three metrics against direct-formula oracles on random
    filled matrices, plus the two-task hand case."""
    rng = np.random.default_rng(4000)
    worst = 0.0
    for _ in range(trials):
        t = int(rng.integers(2, 7))
        m = mt.AccuracyMatrix(t)
        for j in range(t):
            for i in range(j + 1):
                m.set(j, i, float(rng.uniform()))
        a = m.values
        avg_ref = float(np.mean(a[t - 1, :t]))
        new_ref = float(np.mean(np.diagonal(a)))
        fgt_ref = float(
            np.mean([np.max(a[i: t - 1, i]) - a[t - 1, i] for i in range(t - 1)])
        )
        worst = max(
            worst,
            abs(mt.avg_accuracy(m) - avg_ref),
            abs(mt.new_task_accuracy(m) - new_ref),
            abs(mt.forgetting(m) - fgt_ref),
        )
    hand = mt.AccuracyMatrix(2)
    hand.set(0, 0, 0.9)
    hand.set(1, 0, 0.8)
    hand.set(1, 1, 0.7)
    hand_ok = (
        abs(mt.avg_accuracy(hand) - 0.75) < 1e-15
        and abs(mt.forgetting(hand) - 0.1) < 1e-15
        and abs(mt.new_task_accuracy(hand) - 0.8) < 1e-15
    )
    return {"max_error": worst, "hand_case_ok": hand_ok}


# ------------------------------------------------------------ the suite


def verify_all() -> list[dict]:
    """Run every named property check; one row per property.

    Each row carries the measured numbers so failures are diagnosable
    from the printout alone.
    """
    rows = []

    svd = svd_suite()
    rows.append({
        "name": "svd",
        "ok": svd["reconstruction"] <= 1e-10 and svd["orthogonality"] <= 1e-10
        and svd["projector"] <= 1e-9,
        "detail": (
            f"recon {svd['reconstruction']:.2e}, factors {svd['orthogonality']:.2e}, "
            f"projector-vs-lapack {svd['projector']:.2e}"
        ),
    })

    ortho = orthonormalize_suite()
    rows.append({
        "name": "orthonormalize",
        "ok": ortho <= 1e-9,
        "detail": f"max defect {ortho:.2e}",
    })

    for paradigm in pm.PARADIGMS:
        err = gradient_check(paradigm)
        rows.append({
            "name": f"gradients-{paradigm}",
            "ok": err <= 1e-4,
            "detail": f"max relative fd error {err:.2e}",
        })

    for paradigm in pm.PARADIGMS:
        res = orthogonality_check(paradigm)
        rows.append({
            "name": f"orthogonality-{paradigm}",
            "ok": res["max_overlap"] <= 1e-9 and res["idempotence"] <= 1e-12,
            "detail": (
                f"max feature overlap {res['max_overlap']:.2e}, "
                f"idempotence {res['idempotence']:.2e}"
            ),
        })

    for paradigm in pm.PARADIGMS:
        res = eta_scaling_probe(paradigm)
        if paradigm in ("adapter", "lora"):
            ok = 3.2 <= res["proj_ratio"] <= 4.8 and 1.6 <= res["unproj_ratio"] <= 2.4
        else:
            # Token-row paradigms keep a first-order path through the value
            # slot, so the honest guarantee is drift reduction, not order.
            ok = (
                1.6 <= res["unproj_ratio"] <= 2.4
                and res["proj_drift"] < res["unproj_drift_matched"]
            )
        rows.append({
            "name": f"eta-scaling-{paradigm}",
            "ok": bool(ok),
            "detail": (
                f"projected ratio {res['proj_ratio']:.3f} at eta {res['proj_eta']:g}, "
                f"unprojected ratio {res['unproj_ratio']:.3f} at eta {res['unproj_eta']:g}, "
                f"drift {res['proj_drift']:.3g} vs {res['unproj_drift_matched']:.3g} unprojected"
            ),
        })

    metrics = metrics_oracle_check()
    rows.append({
        "name": "metrics",
        "ok": metrics["max_error"] <= 1e-15 and metrics["hand_case_ok"],
        "detail": f"max formula error {metrics['max_error']:.2e}",
    })

    return rows
