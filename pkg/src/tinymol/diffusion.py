"""Latent denoising diffusion over a frozen sequence autoencoder.

A character-level autoencoder maps SMILES to a fixed-size latent matrix
and back; it is trained once and then frozen. A small conditioned
transformer predicts the noise added by the closed-form forward process;
sampling runs ancestral denoising steps and blends conditional and
unconditional noise estimates with a guidance scale. Editing starts the
reverse process from a noised encoding of a source molecule instead of
pure noise.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from . import nn
from .chem import check_validity
from .errors import Error
from .rng import Rng

AE_ALPHABET = "*BCNOPSFIlrbcnops0123456789%()-=#[]+H"  # index 0 is padding


class InvalidRange(Error):
    pass


class StepOutOfRange(Error):
    pass


class TooLong(Error):
    pass


class InvalidSmiles(Error):
    pass


class EmptyBatch(Error):
    pass


@dataclass
class NoiseSchedule:
    """Variance tables for the forward process, step index 1..T.

    ``sqrt_alpha_bar`` is the running product of per-step square roots, so
    composing single-step coefficients reproduces table entries bit-exactly.
    """
    betas: np.ndarray
    alphas: np.ndarray = field(init=False)
    alpha_bars: np.ndarray = field(init=False)
    sqrt_alpha_bars: np.ndarray = field(init=False)

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=np.float64)
        if self.betas.ndim != 1 or self.betas.size == 0:
            raise InvalidRange("beta table must be a nonempty vector")
        if not ((self.betas > 0.0).all() and (self.betas < 1.0).all()):
            raise InvalidRange("every beta must lie strictly inside (0, 1)")
        self.alphas = 1.0 - self.betas
        self.alpha_bars = np.cumprod(self.alphas)
        self.sqrt_alpha_bars = np.cumprod(np.sqrt(self.alphas))

    @property
    def steps(self) -> int:
        return self.betas.size

    def _check(self, t: int, low: int = 0):
        if not low <= t <= self.steps:
            raise StepOutOfRange(f"step {t} outside [{low}, {self.steps}]")

    def beta(self, t: int) -> float:
        self._check(t, low=1)
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        self._check(t, low=1)
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        self._check(t)
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def sqrt_alpha_bar(self, t: int) -> float:
        self._check(t)
        return 1.0 if t == 0 else float(self.sqrt_alpha_bars[t - 1])


def build_schedule(steps: int, beta_start: float = 1e-4,
                   beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta interpolation from beta_start to beta_end over ``steps``."""
    if steps < 1:
        raise InvalidRange("need at least one step")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise InvalidRange(f"require 0 < {beta_start} <= {beta_end} < 1")
    if steps == 1:
        betas = np.array([beta_start])
    else:
        betas = np.linspace(beta_start, beta_end, steps)
    return NoiseSchedule(betas)


# --- sequence autoencoder -------------------------------------------------

@dataclass
class AeConfig:
    max_len: int = 16
    d_latent: int = 8
    d_model: int = 32
    layers: int = 2
    heads: int = 2


@dataclass
class AeParams:
    config: AeConfig
    char_emb: ag.Tensor
    enc_blocks: list
    enc_out: ag.Tensor        # (d_latent, d_model)
    lat_g: ag.Tensor          # latent row normalization, keeps scale ~ unit
    lat_b: ag.Tensor
    dec_in: ag.Tensor         # (d_model, d_latent)
    dec_blocks: list
    dec_out: ag.Tensor        # (vocab, d_model)
    dec_out_b: ag.Tensor
    positions: np.ndarray = None

    def named(self, prefix="ae."):
        yield f"{prefix}char_emb", self.char_emb
        for i, b in enumerate(self.enc_blocks):
            yield from b.named(f"{prefix}enc{i}.")
        yield f"{prefix}enc_out", self.enc_out
        yield f"{prefix}lat_g", self.lat_g
        yield f"{prefix}lat_b", self.lat_b
        yield f"{prefix}dec_in", self.dec_in
        for i, b in enumerate(self.dec_blocks):
            yield from b.named(f"{prefix}dec{i}.")
        yield f"{prefix}dec_out", self.dec_out
        yield f"{prefix}dec_out_b", self.dec_out_b


def init_ae_params(config: AeConfig, rng: Rng) -> AeParams:
    d, v = config.d_model, len(AE_ALPHABET)
    return AeParams(
        config=config,
        char_emb=ag.param(rng.split("emb").normal((v, d), scale=0.05)),
        enc_blocks=[nn.init_block(d, 2 * d, rng.split(f"enc{i}"))
                    for i in range(config.layers)],
        enc_out=ag.param(rng.split("eo").normal((config.d_latent, d),
                                                scale=1.0 / math.sqrt(d))),
        lat_g=ag.param(np.ones(config.d_latent)),
        lat_b=ag.param(np.zeros(config.d_latent)),
        dec_in=ag.param(rng.split("di").normal((d, config.d_latent),
                                               scale=1.0 / math.sqrt(config.d_latent))),
        dec_blocks=[nn.init_block(d, 2 * d, rng.split(f"dec{i}"))
                    for i in range(config.layers)],
        dec_out=ag.param(rng.split("do").normal((v, d), scale=0.05)),
        dec_out_b=ag.param(np.zeros(v)),
        positions=nn.sin_positions(config.max_len, d),
    )


def _char_ids(text: str, max_len: int) -> np.ndarray:
    if len(text) > max_len:
        raise TooLong(f"SMILES longer than {max_len} characters: {text!r}")
    ids = np.zeros(max_len, dtype=np.int64)
    for i, ch in enumerate(text):
        idx = AE_ALPHABET.find(ch)
        if idx <= 0:
            raise InvalidSmiles(f"character {ch!r} outside the latent alphabet")
        ids[i] = idx
    return ids


def _encode_rows(ids: np.ndarray, params: AeParams) -> ag.Tensor:
    cfg = params.config
    x = ag.add(ag.embedding(params.char_emb, ids), ag.tensor(params.positions))
    x = nn.run_stack(x, params.enc_blocks, cfg.heads)
    z = ag.matmul(x, ag.transpose(params.enc_out))
    return ag.layer_norm(z, params.lat_g, params.lat_b)


def _decode_logits(z: ag.Tensor, params: AeParams) -> ag.Tensor:
    cfg = params.config
    x = ag.matmul(z, ag.transpose(params.dec_in))
    x = ag.add(x, ag.tensor(params.positions))
    x = nn.run_stack(x, params.dec_blocks, cfg.heads)
    return ag.add(ag.matmul(x, ag.transpose(params.dec_out)), params.dec_out_b)


def ae_encode(text: str, params: AeParams) -> np.ndarray:
    """Encode a valid SMILES string to an (L, d_latent) latent matrix."""
    if not check_validity(text):
        raise InvalidSmiles(f"not a valid SMILES string: {text!r}")
    return _encode_rows(_char_ids(text, params.config.max_len), params).data


def ae_decode(z: np.ndarray, params: AeParams) -> str:
    """Greedy character decode of a latent matrix; may emit invalid SMILES."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (params.config.max_len, params.config.d_latent):
        raise ag.ShapeMismatch("ae_decode", z.shape,
                               (params.config.max_len, params.config.d_latent))
    logits = _decode_logits(ag.tensor(z), params).data
    chars = []
    for row in logits:
        idx = int(np.argmax(row))
        if idx == 0:
            break
        chars.append(AE_ALPHABET[idx])
    return "".join(chars)


def ae_reconstruction_loss(texts, params: AeParams) -> ag.Tensor:
    """Cross-entropy of decoding each latent back to its padded characters."""
    if not texts:
        raise EmptyBatch("no sequences")
    ids = np.stack([_char_ids(t, params.config.max_len) for t in texts])
    z = _encode_rows(ids, params)
    logits = _decode_logits(z, params)
    flat = ag.reshape(logits, (ids.size, len(AE_ALPHABET)))
    return ag.cross_entropy(flat, ids.reshape(-1))


def pretrain_autoencoder(texts, params: AeParams, steps: int, lr: float = 3e-3,
                         log=None) -> None:
    """Overfit the autoencoder on a small corpus until reconstruction holds."""
    from .training import Adam  # local import; training depends on this module
    opt = Adam(dict(params.named()), lr=lr)
    for step in range(steps):
        opt.zero_grad()
        with ag.Tape() as tape:
            loss = ae_reconstruction_loss(texts, params)
        ag.backward(tape, loss)
        opt.step()
        if log is not None:
            log.append((step, "ae", loss.item()))


# --- conditioned denoiser --------------------------------------------------

@dataclass
class DitConfig:
    latent_len: int = 16
    d_latent: int = 8
    d_model: int = 32
    layers: int = 2
    heads: int = 2
    d_cond: int = 16
    d_text: int = 64  # language model hidden width feeding the projection


@dataclass
class DitParams:
    config: DitConfig
    in_proj: ag.Tensor        # (d_model, d_latent)
    null_token: ag.Tensor     # (1, d_model) unconditional branch token
    cond_proj: ag.Tensor      # (d_model, d_cond) added onto the null token
    blocks: list = None
    out_proj: ag.Tensor = None
    out_b: ag.Tensor = None
    text_w: ag.Tensor = None  # (d_cond, d_text) projection from LM states
    text_b: ag.Tensor = None

    def named(self, prefix="dit."):
        yield f"{prefix}in_proj", self.in_proj
        yield f"{prefix}null_token", self.null_token
        yield f"{prefix}cond_proj", self.cond_proj
        for i, b in enumerate(self.blocks):
            yield from b.named(f"{prefix}block{i}.")
        yield f"{prefix}out_proj", self.out_proj
        yield f"{prefix}out_b", self.out_b
        yield f"{prefix}textproj.w", self.text_w
        yield f"{prefix}textproj.b", self.text_b


def init_dit_params(config: DitConfig, rng: Rng) -> DitParams:
    d = config.d_model
    return DitParams(
        config=config,
        in_proj=ag.param(rng.split("in").normal((d, config.d_latent),
                                                scale=1.0 / math.sqrt(config.d_latent))),
        null_token=ag.param(rng.split("null").normal((1, d), scale=0.1)),
        cond_proj=ag.param(rng.split("cond").normal((d, config.d_cond),
                                                    scale=1.0 / math.sqrt(config.d_cond))),
        blocks=[nn.init_block(d, 2 * d, rng.split(f"block{i}"))
                for i in range(config.layers)],
        out_proj=ag.param(rng.split("out").normal((config.d_latent, d),
                                                  scale=1.0 / math.sqrt(d))),
        out_b=ag.param(np.zeros(config.d_latent)),
        text_w=ag.param(rng.split("tw").normal((config.d_cond, config.d_text),
                                               scale=1.0 / math.sqrt(config.d_text))),
        text_b=ag.param(np.zeros(config.d_cond)),
    )


def text_condition(mean_hidden: ag.Tensor, params: DitParams) -> ag.Tensor:
    """Project pooled language-model states to the condition width: (1, d_c)."""
    return ag.add(ag.matmul(mean_hidden, ag.transpose(params.text_w)), params.text_b)


@dataclass
class GuidanceConfig:
    scale: float = 1.0
    steps: int = 50

    def __post_init__(self):
        if self.scale < 0:
            raise InvalidRange("guidance scale must be nonnegative")


def forward_noise(z0: np.ndarray, t: int, eps: np.ndarray,
                  schedule: NoiseSchedule) -> np.ndarray:
    """Closed-form noising: sqrt(abar_t) z0 + sqrt(1-abar_t) eps."""
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z0.shape != eps.shape:
        raise ag.ShapeMismatch("forward_noise", z0.shape, eps.shape)
    schedule._check(t)
    if t == 0:
        return z0.copy()
    a = schedule.sqrt_alpha_bar(t)
    return a * z0 + math.sqrt(1.0 - schedule.alpha_bar(t)) * eps


def _denoise_rows(z_t: ag.Tensor, t: int, cond, params: DitParams) -> ag.Tensor:
    """Shared forward pass; ``cond`` is a (1, d_cond) tensor or None.

    The condition enters as a learned additive token: the null embedding
    plus (for the conditional branch) a projection of ``cond``, added onto
    every latent row alongside the timestep embedding.
    """
    cfg = params.config
    token = params.null_token
    if cond is not None:
        token = ag.add(token, ag.matmul(cond, ag.transpose(params.cond_proj)))
    x = ag.matmul(z_t, ag.transpose(params.in_proj))
    x = ag.add(x, ag.tensor(nn.timestep_embedding(t, cfg.d_model)))
    x = ag.add(x, token)
    x = nn.run_stack(x, params.blocks, cfg.heads)
    return ag.add(ag.matmul(x, ag.transpose(params.out_proj)), params.out_b)


def predict_noise(z_t: np.ndarray, t: int, cond, params: DitParams,
                  schedule: NoiseSchedule = None) -> ag.Tensor:
    """Estimate the noise component of z_t; output matches its shape.

    ``cond`` is a (1, d_cond) array/tensor or None for the unconditional
    branch.
    """
    if schedule is not None:
        schedule._check(t, low=1)
    cfg = params.config
    z_t = ag.tensor(z_t)
    if z_t.shape[-2:] != (cfg.latent_len, cfg.d_latent):
        raise ag.ShapeMismatch("predict_noise", z_t.shape,
                               (cfg.latent_len, cfg.d_latent))
    if cond is not None:
        cond = ag.tensor(cond)
        if cond.shape != (1, cfg.d_cond):
            raise ag.ShapeMismatch("predict_noise condition", cond.shape,
                                   (1, cfg.d_cond))
    return _denoise_rows(z_t, t, cond, params)


def cfg_combine(eps_uncond: np.ndarray, eps_cond: np.ndarray,
                scale: float) -> np.ndarray:
    """Guided estimate: uncond + scale * (cond - uncond).

    scale 0 and 1 return the respective branch bit-exactly.
    """
    eps_uncond = np.asarray(eps_uncond, dtype=np.float64)
    eps_cond = np.asarray(eps_cond, dtype=np.float64)
    if eps_uncond.shape != eps_cond.shape:
        raise ag.ShapeMismatch("cfg_combine", eps_uncond.shape, eps_cond.shape)
    if scale == 0.0:
        return eps_uncond.copy()
    if scale == 1.0:
        return eps_cond.copy()
    return eps_uncond + scale * (eps_cond - eps_uncond)


def bridge_init(source: str, t: int, eps: np.ndarray, schedule: NoiseSchedule,
                ae_params: AeParams) -> np.ndarray:
    """Noised encoding of a source molecule, the edit starting point."""
    z0 = ae_encode(source, ae_params)
    return forward_noise(z0, t, eps, schedule)


@dataclass
class DiffusionParams:
    ae: AeParams
    dit: DitParams

    def named(self):
        yield from self.ae.named()
        yield from self.dit.named()


def sample(cond, guidance: GuidanceConfig, schedule: NoiseSchedule,
           params: DiffusionParams, rng: Rng, source: str = None,
           bridge_t: int = None) -> str:
    """Ancestral denoising from noise (or a noised source) down to SMILES.

    ``cond`` is a (1, d_cond) array or None. The conditional branch is only
    evaluated when the guidance scale needs it, so scale 0 is bitwise
    independent of the condition.
    """
    cfg = params.dit.config
    shape = (cfg.latent_len, cfg.d_latent)
    if source is not None:
        t_start = schedule.steps if bridge_t is None else bridge_t
        schedule._check(t_start, low=1)
        z = bridge_init(source, t_start, rng.normal(shape), schedule, params.ae)
    else:
        t_start = schedule.steps
        z = rng.normal(shape)

    cond_arr = None if cond is None else np.asarray(
        cond.data if isinstance(cond, ag.Tensor) else cond)
    for t in range(t_start, 0, -1):
        if cond_arr is None or guidance.scale == 0.0:
            eps_hat = predict_noise(z, t, None, params.dit).data
        elif guidance.scale == 1.0:
            eps_hat = predict_noise(z, t, cond_arr, params.dit).data
        else:
            eps_u = predict_noise(z, t, None, params.dit).data
            eps_c = predict_noise(z, t, cond_arr, params.dit).data
            eps_hat = cfg_combine(eps_u, eps_c, guidance.scale)
        beta = schedule.beta(t)
        alpha = schedule.alpha(t)
        abar = schedule.alpha_bar(t)
        mean = (z - beta / math.sqrt(1.0 - abar) * eps_hat) / math.sqrt(alpha)
        if t > 1:
            var = (1.0 - schedule.alpha_bar(t - 1)) / (1.0 - abar) * beta
            z = mean + math.sqrt(var) * rng.normal(shape)
        else:
            z = mean
    return ae_decode(z, params.ae)


def diffusion_loss(batch, schedule: NoiseSchedule, params: DiffusionParams,
                   rng: Rng, uncond_prob: float = 0.1) -> ag.Tensor:
    """Noise-prediction objective, squared error summed per element.

    ``batch`` holds (smiles, condition) pairs where the condition is a
    (1, d_cond) array/tensor or None. Each draw replaces the condition with
    the unconditional branch with probability ``uncond_prob`` so guidance
    has both branches to blend.
    """
    if not batch:
        raise EmptyBatch("diffusion_loss needs at least one sample")
    total = None
    for smiles, cond in batch:
        z0 = ae_encode(smiles, params.ae)
        t = rng.integer(1, schedule.steps + 1)
        eps = rng.normal(z0.shape)
        if cond is not None and rng.uniform() < uncond_prob:
            cond = None
        z_t = forward_noise(z0, t, eps, schedule)
        pred = predict_noise(z_t, t, cond, params.dit)
        term = ag.sum_squares(ag.sub(pred, ag.tensor(eps)))
        total = term if total is None else ag.add(total, term)
    return ag.scale(total, 1.0 / len(batch))
