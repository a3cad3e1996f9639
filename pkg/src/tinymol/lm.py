"""Character-level causal language model with module dispatch.

The vocabulary is printable ASCII plus eight special tokens. Molecular
spans detected in the input trigger an on-the-fly "perceive" step that
appends the molecule's adapted graph embedding to the working row
sequence right after the span, so later positions can attend to it under
the causal mask. Three dispatch tokens hand control to the generation and
reaction modules mid-decode; their outputs are re-encoded as ordinary
tokens before the next step.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from . import nn
from .chem import check_validity
from .errors import Error
from .rng import Rng

PAD, BOS, EOS = "<pad>", "<bos>", "<eos>"
MOL_OPEN, MOL_CLOSE = "<mol>", "</mol>"
DISPATCH_PERCEIVE = "<d:perceive>"
DISPATCH_GENERATE = "<d:generate>"
DISPATCH_REACT = "<d:react>"
SPECIALS = (PAD, BOS, EOS, MOL_OPEN, MOL_CLOSE,
            DISPATCH_PERCEIVE, DISPATCH_GENERATE, DISPATCH_REACT)

# Characters valid inside SMILES; used by the entity detector prefilter.
_SMILES_CHARS = set("BCNOPSFIlrbcnops0123456789%()-=#[]+H")


class VocabOverflow(Error):
    pass


class EmptyBatch(Error):
    pass


class Tokenizer:
    """Characters plus literal special-token markers."""

    def __init__(self):
        self._tokens = list(SPECIALS) + [chr(c) for c in range(32, 127)]
        self._index = {tok: i for i, tok in enumerate(self._tokens)}

    @property
    def size(self) -> int:
        return len(self._tokens)

    def id(self, token: str) -> int:
        return self._index[token]

    def encode(self, text: str) -> list:
        ids = []
        pos = 0
        while pos < len(text):
            for special in SPECIALS:
                if text.startswith(special, pos):
                    ids.append(self._index[special])
                    pos += len(special)
                    break
            else:
                ch = text[pos]
                if ch not in self._index:
                    raise VocabOverflow(f"character {ch!r} is outside the vocabulary")
                ids.append(self._index[ch])
                pos += 1
        return ids

    def decode(self, ids) -> str:
        out = []
        for i in ids:
            if not 0 <= i < len(self._tokens):
                raise VocabOverflow(f"token id {i} out of range")
            out.append(self._tokens[i])
        return "".join(out)


@dataclass
class LmConfig:
    vocab: int
    d: int = 64
    heads: int = 4
    layers: int = 4
    max_len: int = 256
    mlp_ratio: int = 4


@dataclass
class LmParams:
    config: LmConfig
    tok_emb: ag.Tensor
    blocks: list
    ln_g: ag.Tensor
    ln_b: ag.Tensor
    w_out: ag.Tensor
    b_out: ag.Tensor
    positions: np.ndarray = None  # fixed sinusoidal table

    def named(self, prefix="lm."):
        yield f"{prefix}tok_emb", self.tok_emb
        for i, block in enumerate(self.blocks):
            yield from block.named(f"{prefix}block{i}.")
        yield f"{prefix}ln_g", self.ln_g
        yield f"{prefix}ln_b", self.ln_b
        yield f"{prefix}w_out", self.w_out
        yield f"{prefix}b_out", self.b_out


def init_lm_params(config: LmConfig, rng: Rng) -> LmParams:
    d = config.d
    return LmParams(
        config=config,
        tok_emb=ag.param(rng.split("emb").normal((config.vocab, d), scale=0.02)),
        blocks=[nn.init_block(d, config.mlp_ratio * d, rng.split(f"block{i}"))
                for i in range(config.layers)],
        ln_g=ag.param(np.ones(d)),
        ln_b=ag.param(np.zeros(d)),
        w_out=ag.param(rng.split("out").normal((config.vocab, d), scale=0.02)),
        b_out=ag.param(np.zeros(config.vocab)),
        positions=nn.sin_positions(config.max_len, d),
    )


@dataclass
class HiddenStates:
    """A row sequence plus flags marking injected structural rows."""
    rows: ag.Tensor            # (L, d)
    virtual: list = field(default_factory=list)

    def __post_init__(self):
        if not self.virtual:
            self.virtual = [False] * self.rows.shape[0]
        assert len(self.virtual) == self.rows.shape[0]


def validate_mol_markers(ids, tokenizer: Tokenizer) -> None:
    """MOL_OPEN/MOL_CLOSE must be properly paired and never nested."""
    open_id, close_id = tokenizer.id(MOL_OPEN), tokenizer.id(MOL_CLOSE)
    depth = 0
    for i in ids:
        if i == open_id:
            depth += 1
        elif i == close_id:
            depth -= 1
        if depth not in (0, 1):
            raise Error("misnested molecular span markers")
    if depth != 0:
        raise Error("unpaired molecular span markers")


def input_rows(ids, params: LmParams) -> HiddenStates:
    """Token embeddings for a sequence, before any injection."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        raise EmptyBatch("empty token sequence")
    if ids.max() >= params.config.vocab or ids.min() < 0:
        raise VocabOverflow(f"token id {int(ids.max())} out of range")
    return HiddenStates(ag.embedding(params.tok_emb, ids))


def inject_structural_tokens(states: HiddenStates, mols, position=None) -> HiddenStates:
    """Append structural embedding rows (or insert after ``position``).

    Each entry of ``mols`` is a (1, d) adapted molecule embedding; rows are
    added in argument order and flagged as virtual.
    """
    d = states.rows.shape[1]
    for m in mols:
        if m.shape != (1, d):
            raise ag.ShapeMismatch("inject_structural_tokens", m.shape, (1, d))
    if not mols:
        return states
    if position is None:
        position = states.rows.shape[0]
    parts = [ag.slice_axis(states.rows, 0, 0, position)] if position else []
    parts.extend(mols)
    if position < states.rows.shape[0]:
        parts.append(ag.slice_axis(states.rows, 0, position, states.rows.shape[0]))
    flags = states.virtual[:position] + [True] * len(mols) + states.virtual[position:]
    return HiddenStates(ag.concat(parts, axis=0), flags)


def encode_rows(states: HiddenStates, params: LmParams) -> HiddenStates:
    """Run the causal transformer over a row sequence."""
    length = states.rows.shape[0]
    if length > params.config.max_len:
        raise Error(f"sequence length {length} exceeds max_len {params.config.max_len}")
    x = ag.add(states.rows, ag.tensor(params.positions[:length]))
    x = nn.run_stack(x, params.blocks, params.config.heads, nn.causal_mask(length))
    x = ag.layer_norm(x, params.ln_g, params.ln_b)
    return HiddenStates(x, list(states.virtual))


def encode_text(ids, params: LmParams) -> HiddenStates:
    """Embed a token sequence and run it through the backbone."""
    return encode_rows(input_rows(ids, params), params)


def logits_from_states(states: HiddenStates, params: LmParams) -> ag.Tensor:
    return ag.add(ag.matmul(states.rows, ag.transpose(params.w_out)), params.b_out)


def detect_entities(text: str, max_span: int = 80) -> list:
    """Maximal valid-SMILES character spans, length >= 2, left to right."""
    spans = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos] not in _SMILES_CHARS:
            pos += 1
            continue
        run_end = pos
        while run_end < n and text[run_end] in _SMILES_CHARS:
            run_end += 1
        found = None
        for end in range(min(run_end, pos + max_span), pos + 1, -1):
            if check_validity(text[pos:end]):
                found = (pos, end)
                break
        if found:
            spans.append(found)
            pos = found[1]
        else:
            pos += 1
    return spans


@dataclass
class DispatchEvent:
    kind: str       # "perceive" | "generate" | "react"
    payload: dict


@dataclass
class ModuleHooks:
    """Callbacks wiring the pluggable modules into decoding.

    perceive(smiles) -> (1, d) structural embedding or None
    generate(mean_hidden (1, d), rng) -> generated SMILES string
    react(rng) -> dict with at least "text" to splice into the context
    """
    perceive: object = None
    generate: object = None
    react: object = None


@dataclass
class GenerationResult:
    text: str
    events: list
    truncated: bool


def _mean_rows(states: HiddenStates) -> ag.Tensor:
    return ag.tmean(states.rows, axis=0, keepdims=True)


def generate_with_dispatch(prompt_ids, params: LmParams, rng: Rng, max_len: int,
                           hooks: ModuleHooks = None, temperature: float = 0.0,
                           forced=None) -> GenerationResult:
    """Decode from a prompt, routing dispatch tokens to module hooks.

    ``forced`` optionally maps decode-step index to a token id, overriding
    the model's choice at that step (used to script dispatch behavior).
    Module outputs are spliced into the context before the next step.
    Runs out of budget -> partial output with ``truncated`` set.
    """
    tokenizer = Tokenizer()
    hooks = hooks or ModuleHooks()
    forced = dict(forced or {})
    if not prompt_ids:
        raise EmptyBatch("prompt must be nonempty")
    validate_mol_markers(prompt_ids, tokenizer)

    rows = input_rows(prompt_ids, params)
    events = []

    # Perceive molecular spans already present in the prompt.
    prompt_text = tokenizer.decode(prompt_ids)
    if hooks.perceive:
        offset_of = _char_token_offsets(prompt_ids, tokenizer)
        close_id_ = tokenizer.id(MOL_CLOSE)
        shift = 0  # earlier injections push later token positions right
        for start, end in detect_entities(prompt_text):
            smiles = prompt_text[start:end]
            emb = hooks.perceive(smiles)
            if emb is not None:
                position = offset_of[end - 1] + 1
                # span written with markers: inject after the closing marker
                if position < len(prompt_ids) and prompt_ids[position] == close_id_:
                    position += 1
                rows = inject_structural_tokens(rows, [emb], position=position + shift)
                shift += 1
                events.append(DispatchEvent("perceive", {"smiles": smiles,
                                                         "source": "prompt"}))

    generated = []
    eos = tokenizer.id(EOS)
    open_id, close_id = tokenizer.id(MOL_OPEN), tokenizer.id(MOL_CLOSE)
    truncated = False
    step = 0
    while True:
        if rows.rows.shape[0] >= min(max_len, params.config.max_len):
            truncated = True
            break
        states = encode_rows(rows, params)
        last = ag.slice_axis(states.rows, 0, states.rows.shape[0] - 1,
                             states.rows.shape[0])
        logit_row = ag.add(ag.matmul(last, ag.transpose(params.w_out)), params.b_out)
        if step in forced:
            next_id = forced.pop(step)
        elif temperature <= 0.0:
            next_id = int(np.argmax(logit_row.data[0]))
        else:
            probs = ag.softmax(ag.scale(logit_row, 1.0 / temperature)).data[0]
            next_id = int(np.searchsorted(np.cumsum(probs), rng.uniform()))
            next_id = min(next_id, params.config.vocab - 1)
        step += 1
        if next_id == eos:
            break
        generated.append(next_id)
        rows = _append_token(rows, next_id, params)

        if next_id == close_id and hooks.perceive:
            smiles = _last_mol_span(generated, open_id, close_id, tokenizer)
            if smiles is not None and check_validity(smiles):
                emb = hooks.perceive(smiles)
                if emb is not None:
                    rows = inject_structural_tokens(rows, [emb])
                    events.append(DispatchEvent("perceive", {"smiles": smiles,
                                                             "source": "decoded"}))
        elif next_id == tokenizer.id(DISPATCH_GENERATE):
            if hooks.generate:
                condition = _mean_rows(encode_rows(rows, params))
                smiles = hooks.generate(condition, rng)
                insert = tokenizer.encode(MOL_OPEN + smiles + MOL_CLOSE)
                for tid in insert:
                    generated.append(tid)
                    rows = _append_token(rows, tid, params)
                events.append(DispatchEvent("generate", {
                    "smiles": smiles, "valid": check_validity(smiles)}))
                if hooks.perceive and check_validity(smiles):
                    emb = hooks.perceive(smiles)
                    if emb is not None:
                        rows = inject_structural_tokens(rows, [emb])
            else:
                events.append(DispatchEvent("generate", {"skipped": True}))
        elif next_id == tokenizer.id(DISPATCH_REACT):
            if hooks.react:
                result = hooks.react(rng)
                insert = tokenizer.encode(result["text"])
                for tid in insert:
                    generated.append(tid)
                    rows = _append_token(rows, tid, params)
                events.append(DispatchEvent("react", result))
            else:
                events.append(DispatchEvent("react", {"skipped": True}))
        elif next_id == tokenizer.id(DISPATCH_PERCEIVE):
            events.append(DispatchEvent("perceive", {"requested": True}))

    return GenerationResult(tokenizer.decode(generated), events, truncated)


def _append_token(rows: HiddenStates, token_id: int, params: LmParams) -> HiddenStates:
    new = ag.embedding(params.tok_emb, np.array([token_id]))
    return HiddenStates(ag.concat([rows.rows, new], axis=0), rows.virtual + [False])


def _char_token_offsets(ids, tokenizer: Tokenizer):
    """Map character offsets of the decoded text to token indices."""
    mapping = {}
    char_pos = 0
    for tok_idx, tid in enumerate(ids):
        token = tokenizer.decode([tid])
        for _ in token:
            mapping[char_pos] = tok_idx
            char_pos += 1
    return mapping


def _last_mol_span(generated, open_id, close_id, tokenizer):
    """Characters between the most recent matching span markers."""
    try:
        close_pos = len(generated) - 1 - generated[::-1].index(close_id)
        open_pos = close_pos - generated[close_pos::-1].index(open_id)
    except ValueError:
        return None
    inner = generated[open_pos + 1:close_pos]
    return tokenizer.decode(inner)


def lm_loss(batch, params: LmParams, perceive=None) -> ag.Tensor:
    """Mean next-token negative log-likelihood over a batch of sequences.

    Each batch item is a full token sequence (BOS ... EOS). Molecular
    spans get their structural row injected after the closing marker when
    a ``perceive`` hook is supplied; virtual rows and PAD targets are
    masked out of the loss. Sequences are padded and run as one batch.
    """
    if not batch:
        raise EmptyBatch("lm_loss needs at least one sequence")
    tokenizer = Tokenizer()
    open_id, close_id = tokenizer.id(MOL_OPEN), tokenizer.id(MOL_CLOSE)
    pad_id = tokenizer.id(PAD)
    d = params.config.d

    row_plans = []     # per sequence: list of ("tok", id) | ("mol", tensor)
    target_rows = []   # per sequence: aligned target ids (pad for virtual)
    for ids in batch:
        validate_mol_markers(ids, tokenizer)
        inputs, targets = ids[:-1], ids[1:]
        plan, tgt = [], []
        span_start = None
        for pos, tid in enumerate(inputs):
            plan.append(("tok", tid))
            tgt.append(targets[pos])
            if tid == open_id:
                span_start = pos + 1
            elif tid == close_id and perceive and span_start is not None:
                smiles = tokenizer.decode(inputs[span_start:pos])
                emb = perceive(smiles) if check_validity(smiles) else None
                if emb is not None:
                    plan.append(("mol", emb))
                    tgt.append(pad_id)
                span_start = None
        row_plans.append(plan)
        target_rows.append(tgt)

    max_len = max(len(p) for p in row_plans)
    if max_len > params.config.max_len:
        raise Error(f"sequence length {max_len} exceeds max_len {params.config.max_len}")
    stacked = []
    targets = np.full((len(batch), max_len), pad_id, dtype=np.int64)
    mask = np.zeros((len(batch), max_len))
    for b, (plan, tgt) in enumerate(zip(row_plans, target_rows)):
        pieces = []
        token_ids = [e[1] for e in plan if e[0] == "tok"]
        token_arr = np.asarray(token_ids, dtype=np.int64)
        if token_arr.size and (token_arr.max() >= params.config.vocab):
            raise VocabOverflow(f"token id {int(token_arr.max())} out of range")
        tok_iter = iter(range(len(token_ids)))
        tok_rows = ag.embedding(params.tok_emb, token_arr) if token_ids else None
        for kind, value in plan:
            if kind == "tok":
                i = next(tok_iter)
                pieces.append(ag.slice_axis(tok_rows, 0, i, i + 1))
            else:
                pieces.append(value)
        if len(plan) < max_len:
            pieces.append(ag.tensor(np.zeros((max_len - len(plan), d))))
        stacked.append(ag.reshape(ag.concat(pieces, axis=0), (1, max_len, d)))
        for pos, (entry, t) in enumerate(zip(plan, tgt)):
            targets[b, pos] = t
            mask[b, pos] = 0.0 if (entry[0] == "mol" or t == pad_id) else 1.0
    if mask.sum() == 0:
        raise EmptyBatch("every target position is padding")

    x = ag.concat(stacked, axis=0)
    x = ag.add(x, ag.tensor(params.positions[:max_len]))
    x = nn.run_stack(x, params.blocks, params.config.heads, nn.causal_mask(max_len))
    x = ag.layer_norm(x, params.ln_g, params.ln_b)
    logits = ag.add(ag.matmul(x, ag.transpose(params.w_out)), params.b_out)
    flat = ag.reshape(logits, (len(batch) * max_len, params.config.vocab))
    return ag.cross_entropy(flat, targets.reshape(-1), mask.reshape(-1))


def text_embedding(text: str, params: LmParams) -> ag.Tensor:
    """Mean of the final hidden states of the encoded text: (1, d)."""
    tokenizer = Tokenizer()
    ids = [tokenizer.id(BOS)] + tokenizer.encode(text)
    return _mean_rows(encode_text(ids, params))


def text_embeddings_batch(texts, params: LmParams) -> ag.Tensor:
    """Mean final hidden state per text, padded and run as one batch: (B, d).

    Trailing PAD rows cannot influence earlier rows under the causal mask
    and are excluded from each mean.
    """
    if not texts:
        raise EmptyBatch("no texts")
    tokenizer = Tokenizer()
    seqs = [[tokenizer.id(BOS)] + tokenizer.encode(t) for t in texts]
    max_len = max(len(s) for s in seqs)
    if max_len > params.config.max_len:
        raise Error(f"text length {max_len} exceeds max_len {params.config.max_len}")
    pad = tokenizer.id(PAD)
    ids = np.full((len(seqs), max_len), pad, dtype=np.int64)
    weights = np.zeros((len(seqs), max_len))
    for b, seq in enumerate(seqs):
        ids[b, :len(seq)] = seq
        weights[b, :len(seq)] = 1.0 / len(seq)
    x = ag.add(ag.embedding(params.tok_emb, ids), ag.tensor(params.positions[:max_len]))
    x = nn.run_stack(x, params.blocks, params.config.heads, nn.causal_mask(max_len))
    x = ag.layer_norm(x, params.ln_g, params.ln_b)
    means = ag.matmul(ag.tensor(weights.reshape(len(seqs), 1, max_len)), x)
    return ag.reshape(means, (len(seqs), params.config.d))


def uniform_loss(vocab: int) -> float:
    """Reference value: NLL of any target under uniform logits."""
    return math.log(vocab)
