"""Set transformer over per-molecule reaction tokens.

Each molecule becomes one token: the sum of a projected graph embedding,
projected stoichiometric amounts (five values paired with five presence
masks), a role embedding, and an observed/masked type embedding. A
learned aggregate token is prepended and full self-attention runs with no
positional encoding, so the molecules form a set. Masking the product
slot gives product prediction, masking a reactant gives retrosynthesis,
and the aggregate state feeds a dual regression/classification yield
head.

Tokens are sorted by a canonical content key before attention, which
makes permutation invariance of the outputs bit-exact rather than
approximate.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from . import nn
from .errors import Error
from .rng import Rng

ROLES = ("reactant", "reagent", "solvent", "catalyst", "product")
AMOUNT_KEYS = ("moles", "mass", "volume", "concentration", "equivalents")
OBSERVED, MASKED = 0, 1


class UnknownRole(Error):
    pass


class IndexOutOfRange(Error):
    pass


class EmptyMask(Error):
    pass


class EmptyLibrary(Error):
    pass


class OutOfRange(Error):
    pass


class EmptyBatch(Error):
    pass


@dataclass
class ReactionMolecule:
    smiles: str
    role: str
    amounts: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.role not in ROLES:
            raise UnknownRole(f"unknown role {self.role!r}; expected one of {ROLES}")
        for key in self.amounts:
            if key not in AMOUNT_KEYS:
                raise Error(f"unknown amount key {key!r}")


@dataclass
class ReactionRecord:
    molecules: list
    yield_percent: float = None

    def __post_init__(self):
        roles = {m.role for m in self.molecules}
        if "reactant" not in roles or "product" not in roles:
            raise Error("a reaction needs at least one reactant and one product slot")
        if self.yield_percent is not None and not 0.0 <= self.yield_percent <= 100.0:
            raise OutOfRange(f"yield {self.yield_percent} outside [0, 100]")


@dataclass(frozen=True)
class AmountVector:
    """Five z-scored value channels paired with five presence masks."""
    values: tuple
    masks: tuple

    def __post_init__(self):
        assert len(self.values) == len(self.masks) == len(AMOUNT_KEYS)
        for v, m in zip(self.values, self.masks):
            if m == 0 and v != 0.0:
                raise Error("value channel must be 0 where its mask is 0")

    def as_array(self) -> np.ndarray:
        return np.array(self.values + self.masks, dtype=np.float64)


@dataclass
class AmountNormalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, records) -> "AmountNormalizer":
        columns = {key: [] for key in AMOUNT_KEYS}
        for record in records:
            for mol in record.molecules:
                for key, value in mol.amounts.items():
                    columns[key].append(float(value))
        mean = np.zeros(len(AMOUNT_KEYS))
        std = np.ones(len(AMOUNT_KEYS))
        for i, key in enumerate(AMOUNT_KEYS):
            if columns[key]:
                mean[i] = np.mean(columns[key])
                s = np.std(columns[key])
                std[i] = s if s > 1e-12 else 1.0
        return cls(mean, std)

    def vector(self, amounts: dict) -> AmountVector:
        values, masks = [], []
        for i, key in enumerate(AMOUNT_KEYS):
            if key in amounts:
                values.append((float(amounts[key]) - self.mean[i]) / self.std[i])
                masks.append(1.0)
            else:
                values.append(0.0)
                masks.append(0.0)
        return AmountVector(tuple(values), tuple(masks))


@dataclass
class ReactionConfig:
    d_token: int = 64
    d_geo: int = 32
    layers: int = 2
    heads: int = 4
    yield_bins: int = 10


@dataclass
class ReactionParams:
    config: ReactionConfig
    mol_proj: ag.Tensor       # (d_token, d_geo), no bias: zero input drops out
    amt_proj: ag.Tensor       # (d_token, 10), no bias
    role_emb: ag.Tensor       # (len(ROLES), d_token)
    type_emb: ag.Tensor       # (2, d_token)
    cls_token: ag.Tensor      # (1, d_token)
    blocks: list = None
    embed_head_w: ag.Tensor = None
    embed_head_b: ag.Tensor = None
    amt_head_w: ag.Tensor = None
    amt_head_b: ag.Tensor = None
    reg_w: ag.Tensor = None
    reg_b: ag.Tensor = None
    cls_w: ag.Tensor = None
    cls_b: ag.Tensor = None

    def named(self, prefix="rxn."):
        yield f"{prefix}mol_proj", self.mol_proj
        yield f"{prefix}amt_proj", self.amt_proj
        yield f"{prefix}role_emb", self.role_emb
        yield f"{prefix}type_emb", self.type_emb
        yield f"{prefix}cls_token", self.cls_token
        for i, b in enumerate(self.blocks):
            yield from b.named(f"{prefix}block{i}.")
        yield f"{prefix}embed_head.w", self.embed_head_w
        yield f"{prefix}embed_head.b", self.embed_head_b
        yield f"{prefix}amt_head.w", self.amt_head_w
        yield f"{prefix}amt_head.b", self.amt_head_b
        yield f"{prefix}yield_reg.w", self.reg_w
        yield f"{prefix}yield_reg.b", self.reg_b
        yield f"{prefix}yield_cls.w", self.cls_w
        yield f"{prefix}yield_cls.b", self.cls_b


def init_reaction_params(config: ReactionConfig, rng: Rng) -> ReactionParams:
    d = config.d_token
    return ReactionParams(
        config=config,
        mol_proj=ag.param(rng.split("mol").normal((d, config.d_geo),
                                                  scale=1.0 / math.sqrt(config.d_geo))),
        amt_proj=ag.param(rng.split("amt").normal((d, 2 * len(AMOUNT_KEYS)),
                                                  scale=1.0 / math.sqrt(10))),
        role_emb=ag.param(rng.split("role").normal((len(ROLES), d), scale=0.1)),
        type_emb=ag.param(rng.split("type").normal((2, d), scale=0.1)),
        cls_token=ag.param(rng.split("cls").normal((1, d), scale=0.1)),
        blocks=[nn.init_block(d, 2 * d, rng.split(f"block{i}"))
                for i in range(config.layers)],
        embed_head_w=ag.param(rng.split("eh").normal((config.d_geo, d),
                                                     scale=1.0 / math.sqrt(d))),
        embed_head_b=ag.param(np.zeros(config.d_geo)),
        amt_head_w=ag.param(rng.split("ah").normal((len(AMOUNT_KEYS), d),
                                                   scale=1.0 / math.sqrt(d))),
        amt_head_b=ag.param(np.zeros(len(AMOUNT_KEYS))),
        reg_w=ag.param(rng.split("rw").normal((1, d), scale=1.0 / math.sqrt(d))),
        reg_b=ag.param(np.zeros(1)),
        cls_w=ag.param(rng.split("cw").normal((config.yield_bins, d),
                                              scale=1.0 / math.sqrt(d))),
        cls_b=ag.param(np.zeros(config.yield_bins)),
    )


def build_reaction_token(geo, amounts: AmountVector, role: str, ttype: int,
                         params: ReactionParams) -> ag.Tensor:
    """Sum of the four channel encodings: (1, d_token).

    ``geo`` is a (1, d_geo) tensor/array or None for masked targets (the
    zero geometry contribution then drops out exactly). Value channels are
    multiplied by their presence masks inside the projection, so a masked
    amount channel has exactly zero influence and gradient.
    """
    if role not in ROLES:
        raise UnknownRole(f"unknown role {role!r}")
    k = len(AMOUNT_KEYS)
    arr = amounts.as_array()
    masked_values = ag.mul(ag.tensor(arr[:k].reshape(1, k)),
                           ag.tensor(arr[k:].reshape(1, k)))
    amt_in = ag.concat([masked_values, ag.tensor(arr[k:].reshape(1, k))], axis=1)
    token = ag.matmul(amt_in, ag.transpose(params.amt_proj))
    if geo is not None:
        token = ag.add(token, ag.matmul(ag.tensor(geo), ag.transpose(params.mol_proj)))
    token = ag.add(token, ag.embedding(params.role_emb, np.array([ROLES.index(role)])))
    token = ag.add(token, ag.embedding(params.type_emb, np.array([ttype])))
    return token


def _canonical_order(record: ReactionRecord, mask) -> list:
    """Deterministic content-based token order.

    Masked slots sort without their SMILES so hidden content can never
    influence anything, including the order itself.
    """
    def key(idx):
        mol = record.molecules[idx]
        amounts = tuple(sorted((k, float(v)) for k, v in mol.amounts.items()))
        hidden = idx in mask
        return (ROLES.index(mol.role), int(hidden),
                "" if hidden else mol.smiles, amounts, int(hidden) * idx)

    return sorted(range(len(record.molecules)), key=key)


def encode_reaction(record: ReactionRecord, mask, params: ReactionParams,
                    mol_embed, normalizer: AmountNormalizer):
    """Encode one record: (per-molecule states by original index, CLS state).

    ``mask`` is a set of molecule indices treated as prediction targets:
    their geometry channel is zeroed and their type flag set to masked.
    ``mol_embed(smiles)`` supplies (1, d_geo) graph embeddings for the
    observed molecules.
    """
    mask = set(mask)
    n = len(record.molecules)
    for idx in mask:
        if not 0 <= idx < n:
            raise IndexOutOfRange(f"mask index {idx} outside 0..{n - 1}")

    order = _canonical_order(record, mask)
    tokens = [params.cls_token]
    for idx in order:
        mol = record.molecules[idx]
        geo = None if idx in mask else mol_embed(mol.smiles)
        ttype = MASKED if idx in mask else OBSERVED
        tokens.append(build_reaction_token(geo, normalizer.vector(mol.amounts),
                                           mol.role, ttype, params))
    x = ag.concat(tokens, axis=0)
    x = nn.run_stack(x, params.blocks, params.config.heads)
    cls_state = ag.slice_axis(x, 0, 0, 1)
    by_original = {}
    for pos, idx in enumerate(order):
        by_original[idx] = ag.slice_axis(x, 0, pos + 1, pos + 2)
    return by_original, cls_state


def predict_masked_molecule(record: ReactionRecord, mask, params: ReactionParams,
                            mol_embed, normalizer: AmountNormalizer) -> dict:
    """Predicted graph-embedding per masked slot: {index: (1, d_geo)}."""
    mask = set(mask)
    if not mask:
        raise EmptyMask("predict_masked_molecule needs a nonempty mask")
    states, _ = encode_reaction(record, mask, params, mol_embed, normalizer)
    out = {}
    for idx in mask:
        out[idx] = ag.add(ag.matmul(states[idx], ag.transpose(params.embed_head_w)),
                          params.embed_head_b)
    return out


def retrieve_nearest(embedding, library) -> str:
    """Cosine-similarity argmax over (smiles, embedding) pairs.

    Ties go to the lowest library index; zero vectors score 0.
    """
    if not library:
        raise EmptyLibrary("empty retrieval library")
    query = np.asarray(embedding.data if isinstance(embedding, ag.Tensor)
                       else embedding, dtype=np.float64).reshape(-1)
    qn = np.linalg.norm(query)
    best_idx, best_sim = 0, -np.inf
    for i, (_, emb) in enumerate(library):
        emb = np.asarray(emb, dtype=np.float64).reshape(-1)
        en = np.linalg.norm(emb)
        sim = 0.0 if qn == 0.0 or en == 0.0 else float(query @ emb / (qn * en))
        if sim > best_sim:
            best_idx, best_sim = i, sim
    return library[best_idx][0]


@dataclass
class YieldPrediction:
    regression: float          # in [0, 1]
    bin_probs: np.ndarray      # sums to 1 over the configured bins


def _yield_heads(cls_state: ag.Tensor, params: ReactionParams):
    reg = ag.sigmoid(ag.add(ag.matmul(cls_state, ag.transpose(params.reg_w)),
                            params.reg_b))
    logits = ag.add(ag.matmul(cls_state, ag.transpose(params.cls_w)), params.cls_b)
    return reg, logits


def predict_yield(cls_state: ag.Tensor, params: ReactionParams) -> YieldPrediction:
    reg, logits = _yield_heads(cls_state, params)
    probs = ag.softmax(logits).data[0]
    return YieldPrediction(float(reg.data[0, 0]), probs)


def bin_yield(y: float, bins: int = 10) -> int:
    """Uniform bin over [0, 100]; 100 maps to the top bin."""
    if not 0.0 <= y <= 100.0:
        raise OutOfRange(f"yield {y} outside [0, 100]")
    return min(int(y * bins / 100.0), bins - 1)


@dataclass
class ReactionLossWeights:
    emb: float = 1.0
    amt: float = 1.0
    yield_: float = 1.0
    reg: float = 1.0
    cls: float = 1.0


def reaction_loss(batch, params: ReactionParams, mol_embed,
                  normalizer: AmountNormalizer,
                  weights: ReactionLossWeights = None) -> ag.Tensor:
    """Masked-embedding + amount-reconstruction + dual yield objective.

    ``batch`` holds (record, mask) pairs. Each term averages over the
    samples that carry it and contributes exactly zero otherwise; samples
    without a yield label never touch the yield heads.
    """
    if not batch:
        raise EmptyBatch("reaction_loss needs at least one sample")
    weights = weights or ReactionLossWeights()
    emb_terms, amt_terms, yield_terms = [], [], []
    for record, mask in batch:
        mask = set(mask)
        states, cls_state = encode_reaction(record, mask, params, mol_embed,
                                            normalizer)
        for idx in mask:
            predicted = ag.add(
                ag.matmul(states[idx], ag.transpose(params.embed_head_w)),
                params.embed_head_b)
            target = mol_embed(record.molecules[idx].smiles)
            emb_terms.append(ag.mse(predicted, ag.tensor(
                target.data if isinstance(target, ag.Tensor) else target)))

            vec = normalizer.vector(record.molecules[idx].amounts)
            present = np.array(vec.masks)
            if present.sum() > 0:
                recon = ag.add(ag.matmul(states[idx], ag.transpose(params.amt_head_w)),
                               params.amt_head_b)
                diff = ag.sub(recon, ag.tensor(np.array(vec.values).reshape(1, -1)))
                masked = ag.mul(diff, ag.tensor(present.reshape(1, -1)))
                amt_terms.append(ag.scale(ag.sum_squares(masked),
                                          1.0 / present.sum()))
        if record.yield_percent is not None:
            reg, logits = _yield_heads(cls_state, params)
            y01 = record.yield_percent / 100.0
            reg_term = ag.sum_squares(ag.sub(reg, ag.tensor([[y01]])))
            target_bin = bin_yield(record.yield_percent, params.config.yield_bins)
            cls_term = ag.cross_entropy(logits, np.array([target_bin]))
            yield_terms.append(ag.add(ag.scale(reg_term, weights.reg),
                                      ag.scale(cls_term, weights.cls)))

    def averaged(terms):
        if not terms:
            return None
        total = terms[0]
        for term in terms[1:]:
            total = ag.add(total, term)
        return ag.scale(total, 1.0 / len(terms))

    loss = ag.tensor(0.0)
    for lam, terms in ((weights.emb, emb_terms), (weights.amt, amt_terms),
                       (weights.yield_, yield_terms)):
        avg = averaged(terms)
        if avg is not None:
            loss = ag.add(loss, ag.scale(avg, lam))
    return loss
