"""Conditioning inputs for the denoiser: byte-pair tokenizer, caption assembly,
the four-way tumor/TIL class labels, the cyclical-position text encoder and the
class embedder.

Prompts may run to twice the encoder's 77-token context window (154 tokens);
positions repeat every 77 tokens, which is equivalent to embedding each half
separately and concatenating before the causal transformer pass.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np
import torch
from sklearn.base import BaseEstimator
from torch import nn

from .validation import check_probability

SEGMENT_LEN = 77
MAX_TOKENS = 2 * SEGMENT_LEN
PROB_THRESHOLD = 0.5
NULL_CLASS_ID = 4

CLASS_NAMES = {
    0: "Low Tumor + Low TIL",
    1: "Low Tumor + High TIL",
    2: "High Tumor + Low TIL",
    3: "High Tumor + High TIL",
}


# ---------------------------------------------------------------------------
# token sequences and the byte-pair tokenizer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TokenSequence:
    """Token ids capped at twice the context window, with a truncation flag."""

    tokens: tuple[int, ...]
    truncated: bool = False
    segment_len: int = SEGMENT_LEN

    def __post_init__(self):
        if len(self.tokens) > 2 * self.segment_len:
            raise ValueError(f"token sequence longer than {2 * self.segment_len}")

    def __len__(self) -> int:
        return len(self.tokens)


class BpeTokenizer(BaseEstimator):
    """Byte-level BPE tokenizer trained on a small text corpus.

    The base vocabulary is the 256 byte values; fit() greedily learns merge
    rules (most frequent adjacent pair first, ties broken by smallest id pair)
    until `vocab_size` is reached or no pair repeats.
    """

    def __init__(self, vocab_size=2048, max_tokens=MAX_TOKENS):
        self.vocab_size = vocab_size
        self.max_tokens = max_tokens

    def fit(self, texts, y=None):
        if self.vocab_size < 256:
            raise ValueError("vocab_size must be at least 256 (byte vocabulary)")
        sequences = [list(t.encode("utf-8")) for t in texts]
        merges: list[tuple[int, int]] = []
        next_id = 256
        while next_id < self.vocab_size:
            counts = Counter()
            for seq in sequences:
                counts.update(zip(seq, seq[1:]))
            if not counts:
                break
            best = max(counts.items(), key=lambda kv: (kv[1], (-kv[0][0], -kv[0][1])))
            if best[1] < 2:
                break
            pair = best[0]
            merges.append(pair)
            sequences = [_apply_merge(seq, pair, next_id) for seq in sequences]
            next_id += 1
        self.merges_ = merges
        self._ranks_ = {pair: i for i, pair in enumerate(merges)}
        self._bytes_ = _token_bytes(merges)
        return self

    def tokenize(self, text: str) -> TokenSequence:
        """Deterministic ids, truncated at max_tokens with a recorded flag."""
        if getattr(self, "merges_", None) is None:
            self.merges_, self._ranks_, self._bytes_ = [], {}, _token_bytes([])
        seq = list(text.encode("utf-8"))
        while len(seq) > 1:
            ranked = [
                (self._ranks_[p], i)
                for i, p in enumerate(zip(seq, seq[1:]))
                if p in self._ranks_
            ]
            if not ranked:
                break
            rank, _ = min(ranked)
            pair = self.merges_[rank]
            seq = _apply_merge(seq, pair, 256 + rank)
        truncated = len(seq) > self.max_tokens
        return TokenSequence(tokens=tuple(seq[: self.max_tokens]), truncated=truncated)

    def detokenize(self, tokens) -> str:
        ids = tokens.tokens if isinstance(tokens, TokenSequence) else tuple(tokens)
        if getattr(self, "_bytes_", None) is None:
            self._bytes_ = _token_bytes(getattr(self, "merges_", []) or [])
        data = b"".join(self._bytes_[i] for i in ids)
        return data.decode("utf-8")

    def token_count(self, text: str) -> int:
        return len(self.tokenize(text).tokens)

    @property
    def effective_vocab_size(self) -> int:
        return 256 + len(getattr(self, "merges_", []) or [])

    def save(self, path):
        """Plain-text merges file, one `left right` id pair per line."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# ldmkit bpe merges v1 vocab_size={self.vocab_size}\n")
            for left, right in self.merges_:
                fh.write(f"{left} {right}\n")

    @classmethod
    def load(cls, path) -> "BpeTokenizer":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline()
            if not header.startswith("# ldmkit bpe merges v1"):
                raise ValueError(f"{path} is not a merges file")
            vocab_size = int(header.rsplit("=", 1)[1])
            merges = [tuple(int(v) for v in line.split()) for line in fh if line.strip()]
        return cls.from_merges(merges, vocab_size)

    @classmethod
    def from_merges(cls, merges, vocab_size) -> "BpeTokenizer":
        tok = cls(vocab_size=vocab_size)
        tok.merges_ = [tuple(pair) for pair in merges]
        tok._ranks_ = {pair: i for i, pair in enumerate(tok.merges_)}
        tok._bytes_ = _token_bytes(tok.merges_)
        return tok


def _apply_merge(seq: list[int], pair: tuple[int, int], new_id: int) -> list[int]:
    out = []
    i = 0
    while i < len(seq):
        if i + 1 < len(seq) and seq[i] == pair[0] and seq[i + 1] == pair[1]:
            out.append(new_id)
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return out


def _token_bytes(merges: list[tuple[int, int]]) -> list[bytes]:
    table = [bytes([i]) for i in range(256)]
    for left, right in merges:
        table.append(table[left] + table[right])
    return table


# ---------------------------------------------------------------------------
# captions and class labels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Caption:
    """Rendered conditioning text: `{Tumor-level} tumor; {til-level} til; {summary}`."""

    tumor_level: str
    til_level: str
    summary: str
    rendered: str = field(init=False)

    def __post_init__(self):
        if self.tumor_level not in ("Low", "High") or self.til_level not in ("Low", "High"):
            raise ValueError("levels must be 'Low' or 'High'")
        object.__setattr__(
            self,
            "rendered",
            f"{self.tumor_level} tumor; {self.til_level.lower()} til; {self.summary}",
        )


@dataclass(frozen=True)
class ClassLabel:
    """Four-way tumor/TIL class: 2 * [tumor High] + [TIL High]."""

    id: int

    def __post_init__(self):
        if self.id not in (0, 1, 2, 3):
            raise ValueError(f"class id must be in 0..3, got {self.id}")

    @property
    def name(self) -> str:
        return CLASS_NAMES[self.id]


def _level(prob: float) -> str:
    # prob == 0.5 counts as High
    return "High" if prob >= PROB_THRESHOLD else "Low"


def build_caption(tumor_prob: float, til_prob: float, summary: str) -> Caption:
    tumor_prob = check_probability(tumor_prob, "tumor_prob")
    til_prob = check_probability(til_prob, "til_prob")
    return Caption(tumor_level=_level(tumor_prob), til_level=_level(til_prob), summary=summary)


def class_label(tumor_prob: float, til_prob: float) -> ClassLabel:
    tumor_prob = check_probability(tumor_prob, "tumor_prob")
    til_prob = check_probability(til_prob, "til_prob")
    return ClassLabel(id=2 * (tumor_prob >= PROB_THRESHOLD) + (til_prob >= PROB_THRESHOLD))


def parse_caption_levels(rendered: str) -> ClassLabel:
    """Recover the class id from a rendered caption's level words."""
    parts = rendered.split("; ", 2)
    if len(parts) < 2 or not parts[0].endswith(" tumor") or not parts[1].endswith(" til"):
        raise ValueError(f"not a caption rendering: {rendered!r}")
    tumor = parts[0][: -len(" tumor")]
    til = parts[1][: -len(" til")]
    if tumor not in ("Low", "High") or til not in ("low", "high"):
        raise ValueError(f"unrecognized level words in {rendered!r}")
    return ClassLabel(id=2 * (tumor == "High") + (til == "high"))


# ---------------------------------------------------------------------------
# embeddings
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TextEmbedding:
    """Per-token hidden states (seq_len, d_model); seq_len equals the token count."""

    vectors: np.ndarray


class _CausalBlock(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.attn = nn.MultiheadAttention(d_model, n_heads, batch_first=True)
        self.norm2 = nn.LayerNorm(d_model)
        self.mlp = nn.Sequential(
            nn.Linear(d_model, 4 * d_model), nn.GELU(), nn.Linear(4 * d_model, d_model)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x)
        mask = torch.triu(torch.ones(x.shape[1], x.shape[1], dtype=torch.bool), diagonal=1)
        attn, _ = self.attn(h, h, h, attn_mask=mask, need_weights=False)
        x = x + attn
        return x + self.mlp(self.norm2(x))


class TextEncoder(nn.Module):
    """Causal transformer over token + cyclical positional embeddings.

    Token i gets the positional vector of index (i mod segment_len), so prompts
    up to twice the window length reuse the same position table; the whole
    sequence then runs through the encoder in one causal pass. Cross-attention
    consumes the final-layer hidden states at every position.
    """

    def __init__(self, vocab_size: int, d_model: int = 128, n_layers: int = 2,
                 n_heads: int = 4, segment_len: int = SEGMENT_LEN):
        super().__init__()
        self.segment_len = segment_len
        self.d_model = d_model
        self.token_emb = nn.Embedding(vocab_size, d_model)
        self.pos_emb = nn.Embedding(segment_len, d_model)
        self.blocks = nn.ModuleList(_CausalBlock(d_model, n_heads) for _ in range(n_layers))
        self.norm = nn.LayerNorm(d_model)

    def embed_tokens(self, ids: torch.Tensor, cyclical: bool = True) -> torch.Tensor:
        """Pre-transformer token + positional embeddings for id batch (B, L)."""
        if ids.ndim != 2:
            raise ValueError(f"expected (B, L) ids, got shape {tuple(ids.shape)}")
        length = ids.shape[1]
        if length == 0:
            return torch.zeros(ids.shape[0], 0, self.d_model)
        if length > 2 * self.segment_len:
            raise ValueError(f"sequence length {length} exceeds {2 * self.segment_len}")
        positions = torch.arange(length)
        if cyclical:
            positions = positions % self.segment_len
        elif length > self.segment_len:
            raise ValueError("single-segment encoding only defined up to segment_len")
        return self.token_emb(ids) + self.pos_emb(positions)[None]

    def forward(self, ids: torch.Tensor, cyclical: bool = True) -> torch.Tensor:
        """Hidden states (B, L, d) for id batch (B, L); padding must be at the tail.

        Causality makes tail padding inert: position i only sees ids[:, : i + 1].
        """
        x = self.embed_tokens(ids, cyclical=cyclical)
        if x.shape[1] == 0:
            return x
        for block in self.blocks:
            x = block(x)
        return self.norm(x)

    @torch.no_grad()
    def encode_long(self, tokens) -> TextEmbedding:
        """Embed one token sequence of length <= 154 with cyclical positions."""
        ids = list(tokens.tokens if isinstance(tokens, TokenSequence) else tokens)
        if len(ids) > 2 * self.segment_len:
            raise ValueError(f"sequence length {len(ids)} exceeds {2 * self.segment_len}")
        out = self.forward(torch.tensor([ids], dtype=torch.long).reshape(1, len(ids)))
        return TextEmbedding(vectors=out[0].double().numpy())

    @torch.no_grad()
    def encode_single_segment(self, tokens) -> TextEmbedding:
        """Reference single-window encoding (plain positions 0..L-1, L <= 77)."""
        ids = list(tokens.tokens if isinstance(tokens, TokenSequence) else tokens)
        out = self.forward(
            torch.tensor([ids], dtype=torch.long).reshape(1, len(ids)), cyclical=False
        )
        return TextEmbedding(vectors=out[0].double().numpy())


class ClassEmbedder(nn.Module):
    """Learned lookup for the four class ids plus a reserved null slot."""

    def __init__(self, d_model: int = 128, n_classes: int = 4):
        super().__init__()
        self.n_classes = n_classes
        self.table = nn.Embedding(n_classes + 1, d_model)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        if ids.max() > self.n_classes or ids.min() < 0:
            raise ValueError(f"class ids must lie in 0..{self.n_classes} (null = {self.n_classes})")
        return self.table(ids)

    @torch.no_grad()
    def embed_class(self, label: ClassLabel | int) -> np.ndarray:
        idx = label.id if isinstance(label, ClassLabel) else int(label)
        if not 0 <= idx <= self.n_classes:
            raise ValueError(f"class id must lie in 0..{self.n_classes}, got {idx}")
        return self.table(torch.tensor(idx)).double().numpy()

    @torch.no_grad()
    def null_embedding(self) -> np.ndarray:
        return self.embed_class(self.n_classes)
