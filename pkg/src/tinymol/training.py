"""Staged optimization.

Stage "1-pretrain" adapts the language backbone with a KL penalty against
a snapshot taken at stage start; "1-align" pulls molecule and text
embeddings together with a symmetric temperature-scaled contrastive loss
while the backbone stays frozen; "2-joint" optimizes the weighted sum of
per-task losses with absent tasks contributing exactly zero; "3-finetune"
is the joint stage with a caller-chosen freeze set. Frozen parameters are
excluded from the optimizer entirely, so their bytes never change.
"""

import configparser
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autograd as ag
from . import diffusion as dif
from . import lm as lm_mod
from . import reaction as rxn
from .errors import Error
from .rng import Rng

STAGES = ("1-pretrain", "1-align", "2-joint", "3-finetune")


class EmptyBatch(Error):
    pass


class UnknownTaskType(Error):
    pass


class FrozenAllParams(Error):
    pass


@dataclass
class LossWeights:
    lm: float = 1.0
    align: float = 1.0
    diff: float = 1.0
    rxn: float = 1.0
    emb: float = 1.0
    amt: float = 1.0
    yield_: float = 1.0
    reg: float = 1.0
    cls: float = 1.0
    kl: float = 0.1

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if value < 0:
                raise Error(f"loss weight {name} must be nonnegative")

    def reaction_weights(self) -> "rxn.ReactionLossWeights":
        return rxn.ReactionLossWeights(emb=self.emb, amt=self.amt,
                                       yield_=self.yield_, reg=self.reg,
                                       cls=self.cls)


@dataclass
class StageConfig:
    stage: str
    steps: int
    seed: int = 0
    batch_size: int = 8
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    lr_schedule: str = "cosine"
    freeze: tuple = ()
    weights: LossWeights = field(default_factory=LossWeights)
    data: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.stage not in STAGES:
            raise Error(f"unknown stage {self.stage!r}; expected one of {STAGES}")
        if self.lr_schedule not in ("cosine", "constant"):
            raise Error(f"unknown lr schedule {self.lr_schedule!r}")


_WEIGHT_KEYS = {"lm": "lm", "align": "align", "diff": "diff", "rxn": "rxn",
                "emb": "emb", "amt": "amt", "yield": "yield_", "reg": "reg",
                "cls": "cls", "kl": "kl"}


def parse_stage_config(path) -> StageConfig:
    """Key-value stage file with [stage], [freeze], [weights], [optimizer]
    sections ('#' starts a comment); an optional [data] section names the
    corpus files."""
    parser = configparser.ConfigParser(comment_prefixes=("#",), inline_comment_prefixes=("#",))
    read = parser.read(path)
    if not read:
        raise Error(f"cannot read stage config {path}")
    try:
        stage = parser.get("stage", "id")
        steps = parser.getint("stage", "steps")
    except (configparser.Error, ValueError) as exc:
        raise Error(f"{path}: {exc}") from None
    config = StageConfig(stage=stage, steps=steps)
    if parser.has_option("stage", "seed"):
        config.seed = parser.getint("stage", "seed")
    if parser.has_option("stage", "batch"):
        config.batch_size = parser.getint("stage", "batch")
    if parser.has_section("freeze") and parser.has_option("freeze", "prefixes"):
        raw = parser.get("freeze", "prefixes")
        config.freeze = tuple(p.strip() for p in raw.split(",") if p.strip())
    if parser.has_section("weights"):
        values = {}
        for key in parser.options("weights"):
            if key not in _WEIGHT_KEYS:
                raise Error(f"{path}: unknown loss weight {key!r}")
            values[_WEIGHT_KEYS[key]] = parser.getfloat("weights", key)
        config.weights = LossWeights(**values)
    if parser.has_section("optimizer"):
        opt = parser["optimizer"]
        config.lr = opt.getfloat("lr", config.lr)
        config.beta1 = opt.getfloat("beta1", config.beta1)
        config.beta2 = opt.getfloat("beta2", config.beta2)
        config.lr_schedule = opt.get("schedule", config.lr_schedule)
    if parser.has_section("data"):
        config.data = dict(parser["data"])
    return replace(config)  # re-run validation


def kl_regularizer(logits_theta: ag.Tensor, logits_ref) -> ag.Tensor:
    """Mean over rows of KL(softmax(theta) || softmax(ref)).

    The reference logits are constants; gradients flow only through the
    trained side.
    """
    ref = np.asarray(logits_ref.data if isinstance(logits_ref, ag.Tensor)
                     else logits_ref, dtype=np.float64)
    if logits_theta.shape != ref.shape:
        raise ag.ShapeMismatch("kl_regularizer", logits_theta.shape, ref.shape)
    lp = ag.log_softmax(logits_theta)
    p = ag.softmax(logits_theta)
    shifted = ref - ref.max(axis=-1, keepdims=True)
    lq = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    per_row = ag.tsum(ag.mul(p, ag.sub(lp, ag.tensor(lq))), axis=-1)
    return ag.tmean(per_row)


@dataclass
class AlignmentBatch:
    pairs: list                 # (h_mol, h_text) tensors, each (1, d)
    temperature: float = 0.07

    def __post_init__(self):
        if self.temperature <= 0:
            raise Error("temperature must be positive")


def ntxent_alignment_loss(batch: AlignmentBatch) -> ag.Tensor:
    """Symmetric contrastive loss with in-batch negatives.

    Diagonal pairs are positives; the loss averages the molecule-to-text
    and text-to-molecule directions. A batch of one is exactly zero.
    """
    if not batch.pairs:
        raise EmptyBatch("alignment batch is empty")
    mols = ag.concat([m for m, _ in batch.pairs], axis=0)
    texts = ag.concat([t for _, t in batch.pairs], axis=0)
    mols = ag.div(mols, ag.l2norm(mols, keepdims=True))
    texts = ag.div(texts, ag.l2norm(texts, keepdims=True))
    sim = ag.scale(ag.matmul(mols, ag.transpose(texts)), 1.0 / batch.temperature)
    labels = np.arange(len(batch.pairs))
    m2t = ag.cross_entropy(sim, labels)
    t2m = ag.cross_entropy(ag.transpose(sim), labels)
    return ag.scale(ag.add(m2t, t2m), 0.5)


@dataclass
class TaskItem:
    kind: str      # "lm" | "align" | "diffusion" | "reaction"
    payload: object


TASK_KINDS = ("lm", "align", "diffusion", "reaction")


def joint_loss(items, weights: LossWeights, system, rng: Rng) -> ag.Tensor:
    """Weighted sum over the task types present in ``items``.

    Types absent from the batch contribute exactly zero: their loss is
    never evaluated, not merely multiplied by zero.
    """
    groups = {}
    for item in items:
        if item.kind not in TASK_KINDS:
            raise UnknownTaskType(f"unknown task type {item.kind!r}")
        groups.setdefault(item.kind, []).append(item.payload)

    total = ag.tensor(0.0)
    if "lm" in groups:
        loss = lm_mod.lm_loss(groups["lm"], system.lm_params,
                              perceive=system.perceive)
        total = ag.add(total, ag.scale(loss, weights.lm))
    if "align" in groups:
        texts = lm_mod.text_embeddings_batch([d for _, d in groups["align"]],
                                             system.lm_params)
        pairs = []
        for i, (smiles, _) in enumerate(groups["align"]):
            pairs.append((system.perceive(smiles),
                          ag.slice_axis(texts, 0, i, i + 1)))
        loss = ntxent_alignment_loss(AlignmentBatch(pairs))
        total = ag.add(total, ag.scale(loss, weights.align))
    if "diffusion" in groups:
        texts = lm_mod.text_embeddings_batch([d for _, d in groups["diffusion"]],
                                             system.lm_params)
        conds = dif.text_condition(texts, system.diffusion.dit)
        batch = []
        for i, (smiles, _) in enumerate(groups["diffusion"]):
            batch.append((smiles, ag.slice_axis(conds, 0, i, i + 1)))
        loss = dif.diffusion_loss(batch, system.schedule, system.diffusion,
                                  rng.split("diffusion"))
        total = ag.add(total, ag.scale(loss, weights.diff))
    if "reaction" in groups:
        loss = rxn.reaction_loss(groups["reaction"], system.reaction_params,
                                 system.graph_embedding,
                                 system.amount_normalizer,
                                 weights.reaction_weights())
        total = ag.add(total, ag.scale(loss, weights.rxn))
    return total


class Adam:
    """Adam over a name->Tensor dict; call zero_grad/step around backward."""

    def __init__(self, params: dict, lr: float = 3e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {n: np.zeros_like(t.data) for n, t in self.params.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in self.params.items()}
        self.t = 0

    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()

    def step(self, lr: float = None):
        lr = self.lr if lr is None else lr
        self.t += 1
        correct1 = 1.0 - self.beta1 ** self.t
        correct2 = 1.0 - self.beta2 ** self.t
        for name, tensor in self.params.items():
            g = tensor.grad
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            mhat = self.m[name] / correct1
            vhat = self.v[name] / correct2
            tensor.data = tensor.data - lr * mhat / (np.sqrt(vhat) + self.eps)


# Prefixes forced frozen per stage, on top of the caller's freeze set.
_IMPLIED_FREEZE = {
    "1-pretrain": ("gvp.", "ae.", "dit.", "rxn."),
    "1-align": ("lm.", "ae.", "dit.", "rxn."),
    "2-joint": ("ae.",),
    "3-finetune": ("ae.",),
}


@dataclass
class StageResult:
    log: list                  # (step, task, loss) rows
    checkpoint: dict           # name -> array copy


def _cycle(seq, size, cursor):
    batch = []
    for _ in range(size):
        batch.append(seq[cursor % len(seq)])
        cursor += 1
    return batch, cursor


def run_stage(system, config: StageConfig, corpora: dict, rng: Rng) -> StageResult:
    """Optimize the unfrozen parameters for ``config.steps`` steps.

    ``corpora`` maps task kind to prepared items: "lm" -> token sequences,
    "align"/"diffusion" -> (smiles, description) pairs, "reaction" ->
    (record, mask) pairs. Frozen prefixes are removed from the optimizer,
    so those tensors are bit-identical before and after the stage.
    """
    registry = system.named_tensors()
    freeze = set(config.freeze) | set(_IMPLIED_FREEZE[config.stage])
    trainable = {name: t for name, t in registry.items()
                 if not any(name.startswith(p) for p in freeze)}
    if not trainable:
        raise FrozenAllParams("the freeze set covers every parameter")
    optimizer = Adam(trainable, lr=config.lr, beta1=config.beta1,
                     beta2=config.beta2)

    if config.stage == "1-pretrain":
        tasks = ["lm"]
        snapshot = system.snapshot_lm()
    elif config.stage == "1-align":
        tasks = ["align"]
        snapshot = None
    else:
        tasks = [k for k in TASK_KINDS if corpora.get(k)]
        snapshot = None
        if not tasks:
            raise EmptyBatch("no corpora for the joint stage")

    for kind in tasks:
        if not corpora.get(kind):
            raise EmptyBatch(f"stage {config.stage} needs a {kind!r} corpus")

    cursors = {k: 0 for k in tasks}
    log = []
    for step in range(config.steps):
        if config.lr_schedule == "cosine":
            lr_t = config.lr * 0.5 * (1.0 + math.cos(math.pi * step / max(config.steps, 1)))
        else:
            lr_t = config.lr
        task = tasks[step % len(tasks)]
        batch, cursors[task] = _cycle(corpora[task], config.batch_size,
                                      cursors[task])
        optimizer.zero_grad()
        with ag.Tape() as tape:
            items = [TaskItem(task, item) for item in batch]
            loss = joint_loss(items, config.weights, system,
                              rng.split(f"step{step}"))
            if config.stage == "1-pretrain" and config.weights.kl > 0:
                kl = _backbone_kl(batch, system.lm_params, snapshot)
                loss = ag.add(loss, ag.scale(kl, config.weights.kl))
        ag.backward(tape, loss)
        optimizer.step(lr_t)
        log.append((step, task, loss.item()))
    return StageResult(log=log, checkpoint=system.state_dict())


def _backbone_kl(batch, params, snapshot) -> ag.Tensor:
    """Per-token KL between current and stage-start next-token logits."""
    terms = []
    for ids in batch:
        states = lm_mod.encode_text(ids[:-1], params)
        logits = lm_mod.logits_from_states(states, params)
        ref_states = lm_mod.encode_text(ids[:-1], snapshot)
        ref_logits = lm_mod.logits_from_states(ref_states, snapshot)
        terms.append(kl_regularizer(logits, ref_logits.data))
    total = terms[0]
    for term in terms[1:]:
        total = ag.add(total, term)
    return ag.scale(total, 1.0 / len(terms))


def write_metrics_csv(path, log) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,task,loss\n")
        for step, task, loss in log:
            fh.write(f"{step},{task},{loss:.10g}\n")


def pretrain_denoiser(params: "dif.DiffusionParams", schedule, items, steps: int,
                      rng: Rng, lr: float = 2e-3, log=None) -> None:
    """Independent component pretraining of the noise predictor.

    ``items`` holds (smiles, text-embedding) pairs; conditions flow through
    the live text projection so it learns to spread the conditions apart.
    Only denoiser-side parameters are optimized, so the autoencoder stays
    frozen by construction.
    """
    texts = np.concatenate([np.asarray(t).reshape(1, -1) for _, t in items])
    optimizer = Adam(dict(params.dit.named()), lr=lr)
    for step in range(steps):
        optimizer.zero_grad()
        with ag.Tape() as tape:
            conds = dif.text_condition(ag.tensor(texts), params.dit)
            batch = [(smiles, ag.slice_axis(conds, 0, i, i + 1))
                     for i, (smiles, _) in enumerate(items)]
            loss = dif.diffusion_loss(batch, schedule, params,
                                      rng.split(f"step{step}"))
        ag.backward(tape, loss)
        optimizer.step()
        if log is not None:
            log.append((step, "diffusion", loss.item()))


def pretrain_reaction(params, batch, mol_embed, normalizer, steps: int,
                      rng: Rng, lr: float = 3e-3, batch_size: int = None,
                      weights=None, log=None) -> None:
    """Independent component pretraining of the reaction transformer.

    ``batch`` holds (record, mask) pairs; ``mol_embed`` is typically a
    frozen-encoder cache at this stage.
    """
    optimizer = Adam(dict(params.named()), lr=lr)
    size = batch_size or len(batch)
    cursor = 0
    for step in range(steps):
        chunk, cursor = _cycle(batch, size, cursor)
        optimizer.zero_grad()
        with ag.Tape() as tape:
            loss = rxn.reaction_loss(chunk, params, mol_embed, normalizer,
                                     weights)
        ag.backward(tape, loss)
        optimizer.step()
        if log is not None:
            log.append((step, "reaction", loss.item()))
