"""Sequential-task training with per-site orthogonal gradient projection.

One continual run is a loop over a task stream.  Each task trains the
paradigm tensors plus a shared linear head, evaluates on every task seen
so far, then feeds a held-out feature slice into per-site reservoir
buffers and rebuilds the projection bases from them.  From the second
task onward, raw gradients are projected onto the stored feature null
space before the optimizer sees them, so optimizer moments accumulate
already-projected directions.  The head is never projected.

Class visibility is controlled per scenario:

  cil / oil   train and test over all classes seen so far
  til         train over seen classes, test within the true task block
  dil         no masking; every task shares one label set

Masked logits are set to -inf before the softmax so excluded classes get
exactly zero probability and exactly zero gradient.
"""

from dataclasses import dataclass, field

import numpy as np

from . import backbone as bb
from . import checkpoint as ck
from . import data as dm
from . import metrics as mt
from . import pet as pm
from . import projection as pj
from . import rng as rng_mod

OPTIMIZERS = ("sgd", "adam")
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    """Per-run optimization settings.

    ``first_task_lr`` optionally overrides ``lr`` on the first task only;
    the remaining tasks are the continual regime under test.  Online
    class-incremental streams are single-pass by definition, so the
    constructor rejects ``scenario="oil"`` with more than one epoch
    rather than silently coercing it.
    """

    epochs: int = 5
    batch_size: int = 16
    lr: float = 0.01
    first_task_lr: float | None = None
    optimizer: str = "adam"
    scenario: str = "cil"
    seed: int = 0
    backbone_seed: int | None = None
    projection: bool = True
    proj: pj.ProjectionConfig = field(default_factory=pj.ProjectionConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr < 0 or not np.isfinite(self.lr):
            raise ValueError(f"lr must be finite and >= 0, got {self.lr}")
        if self.first_task_lr is not None and (self.first_task_lr < 0 or not np.isfinite(self.first_task_lr)):
            raise ValueError(f"first_task_lr must be finite and >= 0, got {self.first_task_lr}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.scenario not in dm.SCENARIOS:
            raise ValueError(f"scenario must be one of {dm.SCENARIOS}, got {self.scenario!r}")
        if self.scenario == "oil" and self.epochs != 1:
            raise ValueError("oil streams are single-pass; epochs must be 1")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")
        if self.backbone_seed is not None and self.backbone_seed < 0:
            raise ValueError(f"backbone_seed must be >= 0, got {self.backbone_seed}")


@dataclass
class OptimizerState:
    """First/second moments per tensor name; empty dicts for plain sgd."""

    kind: str
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def init_optimizer(kind: str, pet: pm.PetState, head: np.ndarray) -> OptimizerState:
    if kind not in OPTIMIZERS:
        raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {kind!r}")
    state = OptimizerState(kind=kind)
    if kind == "adam":
        for name, arr in pet.params.items():
            state.m[name] = np.zeros_like(arr)
            state.v[name] = np.zeros_like(arr)
        state.m["head"] = np.zeros_like(head)
        state.v["head"] = np.zeros_like(head)
    return state


def apply_updates(opt, pet, head, grads, head_grad, lr):
    """One optimizer step over the paradigm tensors and the head, in place."""
    opt.step += 1
    items = [(name, pet.params[name], grads[name]) for name in sorted(grads)]
    items.append(("head", head, head_grad))
    for name, arr, g in items:
        if opt.kind == "adam":
            opt.m[name] = ADAM_BETA1 * opt.m[name] + (1.0 - ADAM_BETA1) * g
            opt.v[name] = ADAM_BETA2 * opt.v[name] + (1.0 - ADAM_BETA2) * (g * g)
            m_hat = opt.m[name] / (1.0 - ADAM_BETA1 ** opt.step)
            v_hat = opt.v[name] / (1.0 - ADAM_BETA2 ** opt.step)
            arr -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        else:
            arr -= lr * g
    pet.bump()


def logit_mask(scenario, phase, num_classes, seen_classes=None, task_classes=None) -> np.ndarray:
    """Boolean mask of classes allowed into the softmax/argmax."""
    if scenario not in dm.SCENARIOS:
        raise ValueError(f"scenario must be one of {dm.SCENARIOS}, got {scenario!r}")
    if phase not in ("train", "test"):
        raise ValueError(f"phase must be 'train' or 'test', got {phase!r}")
    mask = np.zeros(num_classes, dtype=bool)
    if scenario == "dil":
        mask[:] = True
    elif scenario == "til" and phase == "test":
        if task_classes is None:
            raise ValueError("til test masking needs task_classes")
        mask[np.asarray(task_classes, dtype=np.int64)] = True
    else:
        if seen_classes is None or seen_classes < 1 or seen_classes > num_classes:
            raise ValueError(f"seen_classes must be in [1, {num_classes}], got {seen_classes}")
        mask[:seen_classes] = True
    return mask


def masked_cross_entropy(logits, mask, label):
    """Loss and dloss/dlogits with excluded classes pinned to zero.

    Excluded logits are replaced by -inf, so their probabilities and
    gradient entries are exactly 0.0 rather than merely small.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape != mask.shape:
        raise ValueError(f"logits shape {logits.shape} != mask shape {mask.shape}")
    if not mask[label]:
        raise ValueError(f"label {label} is masked out")
    z = np.where(mask, logits, -np.inf)
    z_max = z.max()
    e = np.exp(z - z_max)
    s = e.sum()
    loss = float(np.log(s) - (z[label] - z_max))
    grad = e / s
    grad[label] -= 1.0
    return loss, grad


def _predict(logits, mask):
    z = np.where(mask, np.asarray(logits, dtype=np.float64), -np.inf)
    return int(np.argmax(z))


def evaluate_task(w, pet, head, task, scenario, seen_classes) -> float:
    """Accuracy on one task's test split under that scenario's test mask."""
    mask = logit_mask(scenario, "test", head.shape[1], seen_classes, task.classes)
    correct = 0
    for x, y in zip(task.test_x, task.test_y):
        logits, _ = bb.forward(w, pet, x, head=head, need_trace=False)
        correct += int(_predict(logits, mask) == int(y))
    return correct / task.n_test


def project_grads(pet, grads, bases, depth) -> dict:
    """Route each tensor's raw gradient through its site basis.

    Prompt rows and prefix rows live in feature space, so their gradients
    are right-projected; down/up factors are hit on the input axis, so
    theirs are left-projected through the paired-site bases.
    """
    out = {}
    if pet.paradigm == "prompt":
        out["prompt"] = pj.project_prompt_grad(grads["prompt"], bases["prompt"])
    elif pet.paradigm == "prefix":
        for i in range(depth):
            gk, gv = pj.project_prefix_grads(
                grads[f"prefix_k.{i}"], grads[f"prefix_v.{i}"], bases[f"attn_in.{i}"]
            )
            out[f"prefix_k.{i}"] = gk
            out[f"prefix_v.{i}"] = gv
    elif pet.paradigm == "adapter":
        for i in range(depth):
            gd, gu = pj.project_factor_grads(
                grads[f"adapter_down.{i}"],
                grads[f"adapter_up.{i}"],
                bases[f"mlp_in.{i}"],
                bases[f"adapter_mid.{i}"],
            )
            out[f"adapter_down.{i}"] = gd
            out[f"adapter_up.{i}"] = gu
    else:
        for i in range(depth):
            for slot in ("q", "v"):
                gd, gu = pj.project_factor_grads(
                    grads[f"lora_{slot}_down.{i}"],
                    grads[f"lora_{slot}_up.{i}"],
                    bases[f"attn_in.{i}"],
                    bases[f"lora_{slot}_mid.{i}"],
                )
                out[f"lora_{slot}_down.{i}"] = gd
                out[f"lora_{slot}_up.{i}"] = gu
    return out


def train_task(w, pet, head, task, cfg, bases=None, *, opt=None, seen_classes=None,
               shuffle_rng=None, lr=None, train_rows=None) -> list[float]:
    """Train on one task; returns the per-epoch mean loss curve.

    ``bases=None`` disables projection entirely (the baseline path);
    passing identity bases instead must give the same trajectory.
    ``train_rows`` overrides the training split, e.g. to hold out the
    feature-sampling slice.
    """
    if opt is None:
        opt = init_optimizer(cfg.optimizer, pet, head)
    if seen_classes is None:
        seen_classes = max(task.classes) + 1
    if shuffle_rng is None:
        shuffle_rng = rng_mod.generator(cfg.seed, "shuffle")
    if lr is None:
        lr = cfg.lr
    xs, ys = (task.train_x, task.train_y) if train_rows is None else train_rows
    n = xs.shape[0]
    if n == 0:
        raise ValueError(f"task {task.task_id}: no training rows")
    mask = logit_mask(cfg.scenario, "train", head.shape[1], seen_classes, task.classes)
    grad_keys = sorted(pet.params.keys())
    curve = []
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            gsum = {name: np.zeros_like(pet.params[name]) for name in grad_keys}
            hsum = np.zeros_like(head)
            for i in idx:
                logits, trace = bb.forward(w, pet, xs[i], head=head)
                loss, dlogits = masked_cross_entropy(logits, mask, int(ys[i]))
                if not np.isfinite(loss):
                    raise FloatingPointError(
                        f"non-finite loss on task {task.task_id}, epoch {epoch}, sample {i}"
                    )
                total += loss
                grads, head_grad = bb.backward(trace, w, pet, dlogits, head=head)
                for name in grad_keys:
                    gsum[name] += grads[name]
                hsum += head_grad
            inv = 1.0 / idx.size
            for name in grad_keys:
                gsum[name] *= inv
            hsum *= inv
            if bases is not None:
                gsum = project_grads(pet, gsum, bases, w.cfg.depth)
            apply_updates(opt, pet, head, gsum, hsum, lr)
        curve.append(total / n)
    return curve


def init_buffers(paradigm, model_cfg, proj_cfg) -> dict:
    return {
        site: pj.FeatureBuffer(
            site=site, width=pj.site_width(site, model_cfg), cap=proj_cfg.buffer_cap
        )
        for site in pj.paradigm_sites(paradigm, model_cfg.depth)
    }


def update_buffers(w, pet, sampling_set, buffers, task_id, reservoir_rng):
    """Push freshly sampled site features into every reservoir."""
    for site in sorted(buffers):
        rows = pj.sample_features(w, pet, sampling_set, site)
        buffers[site].add(rows, task_id, reservoir_rng)


def rebuild_bases(pet, buffers, proj_cfg, model_cfg) -> dict:
    """Null-space basis per site, plus the merged basis for prompt rows.

    Prompt gradients must avoid both the stored input features and the
    span of the frozen previous prompt, so the embed-site basis is merged
    with a basis built from the current prompt rows.
    """
    side = "right" if pet.paradigm in ("prompt", "prefix") else "left"
    bases = {}
    for site in sorted(buffers):
        bases[site] = pj.build_basis(buffers[site], proj_cfg.epsilon, side)
    if pet.paradigm == "prompt":
        rows = pet.params["prompt"]
        if rows.shape[0] == 0:
            bases["prompt"] = bases["embed"]
        else:
            prompt_buf = pj.FeatureBuffer(
                site="prompt_rows", width=model_cfg.dim, cap=rows.shape[0]
            )
            prompt_buf.add(rows, task_id=-1, rng=np.random.default_rng(0))
            prompt_basis = pj.build_basis(prompt_buf, proj_cfg.epsilon, "right")
            bases["prompt"] = pj.merge_bases(bases["embed"], prompt_basis, proj_cfg.beta)
    return bases


def _seen_after(stream, t, scenario, num_classes) -> int:
    if scenario == "dil":
        return num_classes
    seen = 0
    for task in stream[: t + 1]:
        seen = max(seen, max(task.classes) + 1)
    return seen


def continual_run(stream, model_cfg, paradigm, cfg, out_dir=None, config_hash=""):
    """Run the full task sequence; returns (AccuracyMatrix, info dict).

    info carries per-task loss curves and, after each rebuild, the basis
    column count per site.  With ``out_dir`` set, a checkpoint bundle is
    written after every task.
    """
    pm.check_paradigm(paradigm)
    if len(stream) == 0:
        raise ValueError("empty task stream")
    needed = max(max(task.classes) for task in stream) + 1
    if model_cfg.num_classes < needed:
        raise ValueError(
            f"head has {model_cfg.num_classes} classes but stream needs {needed}"
        )
    backbone_entropy = cfg.seed if cfg.backbone_seed is None else cfg.backbone_seed
    w = bb.init_backbone(model_cfg, rng_mod.sub_seed(backbone_entropy, "backbone"))
    pet = pm.init_pet(model_cfg, paradigm, rng_mod.sub_seed(cfg.seed, "pet"))
    head = w.classifier.copy()
    buffers = init_buffers(paradigm, model_cfg, cfg.proj)
    shuffle_rng = rng_mod.generator(cfg.seed, "shuffle")
    sampling_rng = rng_mod.generator(cfg.seed, "sampling")
    reservoir_rng = rng_mod.generator(cfg.seed, "reservoir")
    matrix = mt.AccuracyMatrix(len(stream))
    bases = None
    info = {"loss_curves": [], "basis_sizes": []}
    for t, task in enumerate(stream):
        seen = _seen_after(stream, t, cfg.scenario, model_cfg.num_classes)
        perm = sampling_rng.permutation(task.n_train)
        k = min(cfg.proj.sample_count, max(task.n_train - 1, 0))
        sampling_set = task.train_x[perm[:k]]
        train_rows = (task.train_x[perm[k:]], task.train_y[perm[k:]])
        opt = init_optimizer(cfg.optimizer, pet, head)
        lr = cfg.first_task_lr if (t == 0 and cfg.first_task_lr is not None) else cfg.lr
        use_bases = bases if (cfg.projection and t > 0) else None
        curve = train_task(
            w, pet, head, task, cfg, use_bases,
            opt=opt, seen_classes=seen, shuffle_rng=shuffle_rng, lr=lr,
            train_rows=train_rows,
        )
        info["loss_curves"].append(curve)
        for i in range(t + 1):
            matrix.set(t, i, evaluate_task(w, pet, head, stream[i], cfg.scenario, seen))
        update_buffers(w, pet, sampling_set, buffers, t, reservoir_rng)
        bases = rebuild_bases(pet, buffers, cfg.proj, model_cfg)
        info["basis_sizes"].append({key: b.ncols for key, b in sorted(bases.items())})
        if out_dir is not None:
            ck.save_checkpoint(
                f"{out_dir}/task_{t}.json",
                config_hash=config_hash, task_index=t, pet=pet, head=head,
                opt=opt, buffers=buffers, bases=bases, matrix=matrix,
            )
    return matrix, info
