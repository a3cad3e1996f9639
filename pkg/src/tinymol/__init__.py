"""tinymol: a tiny molecular language model with pluggable cognition modules.

Submodules:
    chem       SMILES parsing, conformers, fingerprints
    autograd   dense float64 tensors with taped reverse-mode differentiation
    gvp        rotation-equivariant molecular graph encoder
    lm         character-level causal language model with module dispatch
    diffusion  latent denoising diffusion over a frozen sequence autoencoder
    reaction   set-transformer over per-molecule reaction tokens
    training   staged optimization: KL-regularized pretraining, contrastive
               alignment, joint multi-task training
    metrics    evaluation metrics and capability scorecards
"""

__version__ = "0.1.0"
