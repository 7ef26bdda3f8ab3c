"""Heuristic domain adaptation network and its losses.

The network has a shared encoder trunk feeding a fundament head ``F`` and
``M`` heuristic heads ``H^k``. The transferable output is

    G(x) = F(x) - sum_k H^k(x)

and a domain discriminator ``D`` plays the adversarial game against ``G``
through a gradient reversal layer. All heads work at classification-response
(logit) level.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import InitSpec, Mlp, init_mlp, xavier_std

FUNDAMENT_INIT_STD = 1e-3


def heuristic_init_std(k: int) -> float:
    """Init std of heuristic head ``k`` (1-based): ``0.1 * 2**(k-1)``."""
    return 0.1 * 2.0 ** (k - 1)


@dataclass
class HdanModel:
    encoder: Mlp
    fundament_head: Mlp
    heuristic_heads: List[Mlp]
    discriminator: Mlp
    disc_input: str = "softmax"

    @property
    def M(self) -> int:
        return len(self.heuristic_heads)

    @property
    def num_classes(self) -> int:
        return self.fundament_head.dims[-1]

    @property
    def num_domains(self) -> int:
        return self.discriminator.dims[-1]

    def generator_parameters(self) -> list:
        params = self.encoder.parameters() + self.fundament_head.parameters()
        for head in self.heuristic_heads:
            params += head.parameters()
        return params

    def parameters(self) -> list:
        return self.generator_parameters() + self.discriminator.parameters()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


@dataclass
class ForwardOut:
    f: Tensor
    h_total: Tensor
    h_parts: List[Tensor]
    g: Tensor


@dataclass
class LossBundle:
    l_cls: Tensor
    l_trans: Tensor
    l_h: Tensor
    l_f: Tensor
    l_indep: Optional[Tensor] = None

    def values(self) -> dict:
        out = {
            "l_cls": self.l_cls.item(),
            "l_trans": self.l_trans.item(),
            "l_h": self.l_h.item(),
            "l_f": self.l_f.item(),
        }
        if self.l_indep is not None:
            out["l_indep"] = self.l_indep.item()
        return out


def build_model(
    d_in: int,
    hidden: int,
    num_classes: int,
    M: int,
    num_domains: int,
    seed,
    *,
    heuristic: bool = True,
    activation: str = "tanh",
    disc_hidden: int = 16,
    disc_input: str = "softmax",
) -> HdanModel:
    """Build an HDAN with near-zero fundament head and ``M`` heuristic heads.

    With ``heuristic=False`` the heads are omitted so ``G == F`` (the plain
    adversarial baseline). Encoder, fundament head and discriminator draw from
    the same seed streams either way, so paired runs share their init.
    """
    for name, v in (("d_in", d_in), ("hidden", hidden), ("num_classes", num_classes),
                    ("num_domains", num_domains), ("disc_hidden", disc_hidden)):
        if int(v) <= 0:
            raise ValueError(f"build_model: {name} must be positive, got {v}")
    if M < 1:
        raise ValueError(f"build_model: M must be >= 1, got {M}")
    if num_domains < 2:
        raise ValueError(f"build_model: need at least 2 domains, got {num_domains}")
    if disc_input not in ("softmax", "logits"):
        raise ValueError(f"build_model: disc_input must be 'softmax' or 'logits', got {disc_input!r}")

    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    enc_ss, fund_ss, disc_ss, *head_ss = ss.spawn(3 + M)

    encoder = init_mlp([d_in, hidden], InitSpec.gaussian(xavier_std(d_in)),
                       InitSpec.gaussian(xavier_std(d_in)), enc_ss,
                       activation=activation, output_activation=activation)
    fundament = init_mlp([hidden, num_classes], InitSpec.zeros(),
                         InitSpec.gaussian(FUNDAMENT_INIT_STD), fund_ss)
    heads = []
    if heuristic:
        for k in range(1, M + 1):
            heads.append(init_mlp([hidden, num_classes], InitSpec.zeros(),
                                  InitSpec.gaussian(heuristic_init_std(k)), head_ss[k - 1]))
    disc = init_mlp([num_classes, disc_hidden, num_domains],
                    InitSpec.gaussian(xavier_std(num_classes)),
                    InitSpec.gaussian(xavier_std(disc_hidden)), disc_ss,
                    activation=activation)
    return HdanModel(encoder, fundament, heads, disc, disc_input=disc_input)


def forward(model: HdanModel, x) -> ForwardOut:
    x = x if isinstance(x, Tensor) else Tensor(x)
    z = model.encoder(x)
    f = model.fundament_head(z)
    parts = [head(z) for head in model.heuristic_heads]
    if not parts:
        h_total = Tensor(np.zeros(f.shape))
        return ForwardOut(f=f, h_total=h_total, h_parts=[], g=f)
    h_total = parts[0]
    for p in parts[1:]:
        h_total = ad.add(h_total, p)
    return ForwardOut(f=f, h_total=h_total, h_parts=parts, g=ad.sub(f, h_total))


def classification_loss(g_labeled: Tensor, labels) -> Tensor:
    return ad.softmax_cross_entropy(g_labeled, labels)


def entropy_weights(g_unlabeled) -> np.ndarray:
    """Detached per-sample weights ``1 + exp(-entropy(softmax(g)))``, mean-normalized to 1."""
    g = g_unlabeled.data if isinstance(g_unlabeled, Tensor) else np.asarray(g_unlabeled, dtype=np.float64)
    p = ad._softmax_np(g)
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = -np.where(p > 0, p * np.log(p), 0.0).sum(axis=1)
    w = 1.0 + np.exp(-ent)
    return w / w.mean()


def transfer_loss(
    model: HdanModel,
    g_by_domain: Sequence[Tuple[Tensor, int]],
    lam: float,
    entropy_conditioning: bool = False,
    sample_weights: Optional[np.ndarray] = None,
) -> Tensor:
    """Domain-classification loss of the discriminator on reversed ``G`` outputs.

    The discriminator learns to name each sample's domain; the generator sees
    the gradient scaled by ``-lam``. With two domains this is the usual
    ``-E_s log D - E_t log(1 - D)`` minimax objective.

    ``sample_weights`` replaces the entropy weights when given (one per row
    of the concatenated groups).
    """
    groups = list(g_by_domain)
    if len({int(d) for _, d in groups}) < 2:
        raise ValueError("transfer_loss: need at least two distinct domain groups")
    if lam < 0:
        raise ValueError(f"transfer_loss: lambda must be nonnegative, got {lam}")
    g_all = ad.concat_rows([g for g, _ in groups])
    labels = np.concatenate([np.full(g.shape[0], int(d), dtype=np.int64) for g, d in groups])
    if labels.max() >= model.num_domains:
        raise ValueError(f"transfer_loss: domain id {labels.max()} >= {model.num_domains} discriminator outputs")
    weights = None
    if sample_weights is not None:
        weights = np.asarray(sample_weights, dtype=np.float64)
        if weights.shape != labels.shape:
            raise ValueError(f"transfer_loss: sample_weights shape {weights.shape} != {labels.shape}")
    elif entropy_conditioning:
        weights = np.concatenate([entropy_weights(g) for g, _ in groups])
    disc_in = ad.softmax(g_all) if model.disc_input == "softmax" else g_all
    logits = model.discriminator(ad.grad_reverse(disc_in, lam))
    return ad.softmax_cross_entropy(logits, labels, weights)


def heuristic_loss(h_total: Tensor, norm: str = "l1") -> Tensor:
    """Range penalty on the heuristic output over samples from every domain.

    ``l1`` is the mean absolute value per element; ``l2`` the mean square.
    """
    if h_total.data.size == 0:
        raise ValueError("heuristic_loss: empty input")
    if norm == "l1":
        return ad.l1_mean(h_total)
    if norm == "l2":
        return ad.mean(ad.square(h_total))
    raise ValueError(f"heuristic_loss: norm must be 'l1' or 'l2', got {norm!r}")


def independence_loss(f: Tensor, g: Tensor) -> Tensor:
    """``|kurt(F) - kurt(G)|`` as a differentiable penalty."""
    return ad.abs_(ad.sub(ad.kurtosis(f), ad.kurtosis(g)))


def total_loss(l_cls, l_trans, l_h, mu: float = 1.0, l_indep=None, indep_weight: float = 0.0) -> LossBundle:
    """``L_F = L_cls + L_trans + mu * L_H`` (plus an optional weighted independence term)."""
    l_cls, l_trans, l_h = (ad._as_tensor(v) for v in (l_cls, l_trans, l_h))
    l_f = ad.add(ad.add(l_cls, l_trans), ad.scale(l_h, mu))
    if l_indep is not None:
        l_indep = ad._as_tensor(l_indep)
        l_f = ad.add(l_f, ad.scale(l_indep, indep_weight))
    return LossBundle(l_cls=l_cls, l_trans=l_trans, l_h=l_h, l_f=l_f, l_indep=l_indep)
