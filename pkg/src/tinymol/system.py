"""Wires the pluggable modules into one model system.

A ModelSystem owns the language model, graph encoder, diffusion pair, and
reaction transformer, exposes the flat parameter registry used for
checkpointing and freezing, and builds the dispatch hooks that let the
language model call into the other modules mid-decode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from . import diffusion as dif
from . import gvp
from . import lm as lm_mod
from . import reaction as rxn
from .chem import assign_conformer, parse_smiles
from .errors import Error
from .rng import Rng


@dataclass
class SystemConfig:
    gvp: gvp.GvpConfig = field(default_factory=gvp.GvpConfig)
    lm: lm_mod.LmConfig = None
    ae: dif.AeConfig = field(default_factory=dif.AeConfig)
    dit: dif.DitConfig = field(default_factory=dif.DitConfig)
    reaction: rxn.ReactionConfig = field(default_factory=rxn.ReactionConfig)
    schedule_steps: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.02
    conformer_seed: int = 0

    def __post_init__(self):
        if self.lm is None:
            self.lm = lm_mod.LmConfig(vocab=lm_mod.Tokenizer().size)
        if self.dit.d_text != self.lm.d:
            raise Error("dit.d_text must match the language model width")
        if self.reaction.d_geo != self.gvp.scalar_width:
            raise Error("reaction.d_geo must match the graph embedding width")
        if self.gvp.out_width != self.lm.d:
            raise Error("gvp.out_width must match the language model width")


class ModelSystem:
    def __init__(self, config: SystemConfig, rng: Rng):
        self.config = config
        self.tokenizer = lm_mod.Tokenizer()
        self.lm_params = lm_mod.init_lm_params(config.lm, rng.split("lm"))
        self.gvp_params = gvp.init_gvp_params(config.gvp, rng.split("gvp"))
        self.diffusion = dif.DiffusionParams(
            ae=dif.init_ae_params(config.ae, rng.split("ae")),
            dit=dif.init_dit_params(config.dit, rng.split("dit")),
        )
        self.reaction_params = rxn.init_reaction_params(config.reaction,
                                                        rng.split("rxn"))
        self.schedule = dif.build_schedule(config.schedule_steps,
                                           config.beta_start, config.beta_end)
        self.amount_normalizer = rxn.AmountNormalizer(
            np.zeros(len(rxn.AMOUNT_KEYS)), np.ones(len(rxn.AMOUNT_KEYS)))
        self._graph_cache = {}

    # --- parameter registry ------------------------------------------------

    def named_tensors(self) -> dict:
        out = {}
        for name, tensor in self.lm_params.named():
            out[name] = tensor
        for name, tensor in self.gvp_params.named():
            out[name] = tensor
        for name, tensor in self.diffusion.named():
            out[name] = tensor
        for name, tensor in self.reaction_params.named():
            out[name] = tensor
        return out

    def state_dict(self) -> dict:
        return {name: t.data.copy() for name, t in self.named_tensors().items()}

    def load_state(self, state: dict) -> None:
        registry = self.named_tensors()
        for name, value in state.items():
            if name not in registry:
                raise Error(f"checkpoint tensor {name!r} not in this system")
            if registry[name].data.shape != value.shape:
                raise Error(f"checkpoint tensor {name!r} has shape {value.shape}, "
                            f"expected {registry[name].data.shape}")
            registry[name].data = value.copy()

    def snapshot_lm(self) -> lm_mod.LmParams:
        """Constant copy of the backbone, used as a KL reference."""
        import copy
        snap = copy.copy(self.lm_params)
        snap.tok_emb = ag.tensor(self.lm_params.tok_emb.data.copy())
        snap.blocks = []
        for block in self.lm_params.blocks:
            frozen = copy.copy(block)
            for name in ("ln1_g", "ln1_b", "wq", "wk", "wv", "wo",
                         "ln2_g", "ln2_b", "w1", "b1", "w2", "b2"):
                setattr(frozen, name, ag.tensor(getattr(block, name).data.copy()))
            snap.blocks.append(frozen)
        for name in ("ln_g", "ln_b", "w_out", "b_out"):
            setattr(snap, name, ag.tensor(getattr(self.lm_params, name).data.copy()))
        return snap

    # --- molecule encodings -------------------------------------------------

    def _graph_and_conformer(self, smiles: str):
        if smiles not in self._graph_cache:
            graph = parse_smiles(smiles)
            self._graph_cache[smiles] = (graph,
                                         assign_conformer(graph,
                                                          self.config.conformer_seed))
        return self._graph_cache[smiles]

    def graph_embedding(self, smiles: str) -> ag.Tensor:
        """(1, d_geo) pooled graph embedding through the live encoder."""
        graph, conformer = self._graph_and_conformer(smiles)
        pooled, _ = gvp.encode_molecule(graph, conformer, self.gvp_params)
        return pooled

    def perceive(self, smiles: str) -> ag.Tensor:
        """(1, d) adapted structural embedding for injection into the LM."""
        graph, conformer = self._graph_and_conformer(smiles)
        _, adapted = gvp.encode_molecule(graph, conformer, self.gvp_params)
        return adapted

    def embedding_library(self, smiles_list) -> list:
        """Constant (smiles, graph-embedding) pairs for retrieval decoding."""
        unique = list(dict.fromkeys(smiles_list))
        graphs = [self._graph_and_conformer(s) for s in unique]
        pooled, _ = gvp.encode_molecules([g for g, _ in graphs],
                                         [c for _, c in graphs], self.gvp_params)
        return [(s, pooled.data[i].copy()) for i, s in enumerate(unique)]

    # --- reaction interface ---------------------------------------------------

    def react(self, record: rxn.ReactionRecord, task: str, library) -> dict:
        """Run one reaction query: mask per task, predict, retrieve.

        Tasks: "product" masks the first product slot, "retro" the first
        reactant slot, "yield" masks nothing and reports the yield head.
        """
        roles = [m.role for m in record.molecules]
        if task == "product":
            mask = {roles.index("product")}
        elif task == "retro":
            mask = {roles.index("reactant")}
        elif task == "yield":
            mask = set()
        else:
            raise Error(f"unknown reaction task {task!r}")

        out = {"task": task}
        if mask:
            predicted = rxn.predict_masked_molecule(
                record, mask, self.reaction_params, self.graph_embedding,
                self.amount_normalizer)
            idx = next(iter(mask))
            out["smiles"] = rxn.retrieve_nearest(predicted[idx], library)
        _, cls_state = rxn.encode_reaction(record, mask, self.reaction_params,
                                           self.graph_embedding,
                                           self.amount_normalizer)
        pred = rxn.predict_yield(cls_state, self.reaction_params)
        out["yield_percent"] = pred.regression * 100.0
        out["yield_bin"] = int(np.argmax(pred.bin_probs))
        return out

    # --- dispatch hooks --------------------------------------------------------

    def hooks(self, guidance: dif.GuidanceConfig = None,
              reaction_context=None) -> lm_mod.ModuleHooks:
        """Module callbacks for generate_with_dispatch.

        ``reaction_context`` is an optional (record, task, library) triple
        consumed when the model emits the react dispatch token.
        """
        guidance = guidance or dif.GuidanceConfig(scale=1.0,
                                                  steps=self.schedule.steps)

        def generate_hook(mean_hidden, rng):
            cond = dif.text_condition(mean_hidden, self.diffusion.dit)
            return dif.sample(cond.data, guidance, self.schedule,
                              self.diffusion, rng.split("sample"))

        def react_hook(rng):
            if reaction_context is None:
                return {"text": " (no reaction context)"}
            record, task, library = reaction_context
            result = self.react(record, task, library)
            if "smiles" in result:
                text = (f" predicted {task}: {result['smiles']}"
                        f" yield {result['yield_percent']:.2f}%")
            else:
                text = f" predicted yield {result['yield_percent']:.2f}%"
            result["text"] = text
            return result

        return lm_mod.ModuleHooks(perceive=self.perceive,
                                  generate=generate_hook,
                                  react=react_hook)


def build_system(config: SystemConfig = None, seed: int = 0) -> ModelSystem:
    return ModelSystem(config or SystemConfig(), Rng(seed))
