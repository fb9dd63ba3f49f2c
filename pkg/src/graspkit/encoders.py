"""Instruction and point-cloud encoders producing the condition bundle.

The text encoder is a learned embedding table + mean pool + 2-layer MLP; the
two point encoders are independent shared-MLP + max-pool networks (the object
encoder consumes xyz, the affordance encoder xyz plus a probability channel).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

import numpy as np

from .engine import Tensor, concat
from .nn import MLP, Linear

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text):
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    """Token -> id map; id 0 is reserved for unknown tokens."""

    def __init__(self, tokens):
        self.id_to_token = ["<unk>"] + sorted(set(tokens) - {"<unk>"})
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}

    @classmethod
    def from_corpus(cls, texts):
        toks = []
        for t in texts:
            toks.extend(tokenize(t))
        return cls(toks)

    def encode(self, text):
        toks = tokenize(text)
        if not toks:
            raise ValueError("cannot encode an empty instruction")
        return [self.token_to_id.get(t, 0) for t in toks]

    def __len__(self):
        return len(self.id_to_token)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.id_to_token, fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            tokens = json.load(fh)
        v = cls.__new__(cls)
        v.id_to_token = tokens
        v.token_to_id = {t: i for i, t in enumerate(tokens)}
        return v


@dataclass
class ConditionBundle:
    """Fused conditioning features; all share dimension d."""

    f_text: Tensor
    f_object: Tensor
    f_afford: Tensor

    def concat(self):
        return concat([self.f_text, self.f_object, self.f_afford], axis=-1)

    @property
    def dim(self):
        return self.f_text.shape[-1]


class TextEncoder:
    def __init__(self, vocab_size, dim, rng, embed_dim=32):
        self.embed = Tensor(rng.normal(0, 1.0, size=(vocab_size, embed_dim)),
                            requires_grad=True)
        self.mlp = MLP([embed_dim, dim, dim], rng)
        self.dim = dim

    def __call__(self, token_ids):
        emb = self.embed.gather_rows(token_ids)  # (T, E)
        return self.mlp(emb.mean(axis=0))

    def params(self):
        return [self.embed] + self.mlp.params()


# Point coordinates arrive in meters (magnitudes a few centimeters), which
# starves the first MLP layer; rescaling puts them at order one.
POINT_SCALE = 20.0


class PointEncoder:
    """Shared per-point MLP then max pool; permutation-invariant by design."""

    def __init__(self, in_dim, dim, rng, hidden=64):
        self.mlp = MLP([in_dim, hidden, dim], rng)
        self.dim = dim

    def __call__(self, pts):
        """pts: (N, C) or (B, N, C) Tensor/array; channels start with xyz."""
        x = pts if isinstance(pts, Tensor) else Tensor(pts)
        if x.data.shape[-2] < 1:
            raise ValueError("point encoder requires at least one point")
        if x.data.shape[-1] > 3:
            x = concat([x[..., :3] * POINT_SCALE, x[..., 3:]], axis=-1)
        else:
            x = x * POINT_SCALE
        feat = self.mlp(x)
        pooled, _ = feat.maxpool_over_points(axis=-2)
        return pooled

    def params(self):
        return self.mlp.params()


class ConditionEncoder:
    """Bundles the text encoder and the two independent point encoders."""

    MIN_AFFORD_POINTS = 8
    PROB_THRESHOLD = 0.5

    def __init__(self, vocab, dim, rng):
        self.vocab = vocab
        self.dim = dim
        self.text = TextEncoder(len(vocab), dim, rng)
        self.obj_points = PointEncoder(3, dim, rng)
        self.afford_points = PointEncoder(4, dim, rng)

    @classmethod
    def afford_input(cls, points, probs):
        """Affordance cloud: confident points with their probability channel.

        Falls back to the full cloud when fewer than MIN_AFFORD_POINTS points
        clear the threshold, zeroing the probability channel in that case.
        """
        points = np.asarray(points, dtype=np.float64)
        probs = np.asarray(probs, dtype=np.float64)
        keep = probs >= cls.PROB_THRESHOLD
        if keep.sum() >= cls.MIN_AFFORD_POINTS:
            return np.concatenate([points[keep], probs[keep, None]], axis=1)
        return np.concatenate([points, np.zeros((len(points), 1))], axis=1)

    def __call__(self, instruction, obj_points, afford_points4):
        f_text = self.text(self.vocab.encode(instruction))
        f_obj = self.obj_points(obj_points)
        f_aff = self.afford_points(afford_points4)
        return ConditionBundle(f_text, f_obj, f_aff)

    def params(self):
        return self.text.params() + self.obj_points.params() + self.afford_points.params()
