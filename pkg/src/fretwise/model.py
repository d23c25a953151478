"""Encoder-decoder transformer trained to fill in masked string tokens.

The encoder reads the full note frame with every string slot masked, so
both past and future note values inform each prediction; the decoder is
causal, so only past string assignments are visible. Loss is computed at
string-token targets only.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import CheckpointError, ContractViolationError, VocabularyMismatchError
from .tokens import TOKENS_PER_NOTE, Vocabulary

EXAMPLE_NOTES = 50
EXAMPLE_TOKENS = EXAMPLE_NOTES * TOKENS_PER_NOTE

_CHECKPOINT_MAGIC = b"FWCKPT01"


@dataclass
class ModelConfig:
    vocab_size: int
    hidden_size: int = 384
    num_layers: int = 6
    num_heads: int = 6
    intermediate_size: int = 1536
    dropout: float = 0.10
    max_positions: int = 256

    def __post_init__(self) -> None:
        if self.hidden_size % self.num_heads != 0:
            raise ValueError(
                f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}"
            )
        if self.max_positions < EXAMPLE_TOKENS + 1:  # +1 for the decoder BOS
            raise ValueError(f"max_positions must be at least {EXAMPLE_TOKENS + 1}")


@dataclass
class TrainConfig:
    """Optimization settings; learning_rate=None picks the phase default."""

    learning_rate: float | None = None
    warmup_fraction: float = 0.10
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    weight_decay: float = 0.01
    grad_clip: float = 1.0

    _PHASE_LR = {"pretrain": 1e-4, "finetune": 1e-5}

    def __post_init__(self) -> None:
        if self.learning_rate is not None and self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.warmup_fraction < 1:
            raise ValueError("warmup_fraction must be in [0, 1)")

    def resolved_lr(self, phase: str) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        try:
            return self._PHASE_LR[phase]
        except KeyError:
            raise ValueError(f"unknown training phase {phase!r}") from None


class _MultiHeadAttention(nn.Module):
    def __init__(self, hidden_size: int, num_heads: int, dropout: float):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = hidden_size // num_heads
        self.q_proj = nn.Linear(hidden_size, hidden_size)
        self.k_proj = nn.Linear(hidden_size, hidden_size)
        self.v_proj = nn.Linear(hidden_size, hidden_size)
        self.out_proj = nn.Linear(hidden_size, hidden_size)
        self.dropout = nn.Dropout(dropout)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, t, _ = x.shape
        return x.view(b, t, self.num_heads, self.head_dim).transpose(1, 2)

    def forward(
        self,
        query: torch.Tensor,
        keys: torch.Tensor,
        causal: bool = False,
        key_padding: torch.Tensor | None = None,
    ) -> torch.Tensor:
        q = self._split(self.q_proj(query))
        k = self._split(self.k_proj(keys))
        v = self._split(self.v_proj(keys))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        if causal:
            t_q, t_k = scores.shape[-2], scores.shape[-1]
            future = torch.triu(torch.ones(t_q, t_k, dtype=torch.bool, device=scores.device), 1)
            scores = scores.masked_fill(future, float("-inf"))
        if key_padding is not None:
            scores = scores.masked_fill(key_padding[:, None, None, :], float("-inf"))
        attn = self.dropout(torch.softmax(scores, dim=-1))
        out = (attn @ v).transpose(1, 2).contiguous()
        b, t, _, _ = out.shape
        return self.out_proj(out.view(b, t, -1))


class _FeedForward(nn.Module):
    def __init__(self, hidden_size: int, intermediate_size: int, dropout: float):
        super().__init__()
        self.fc1 = nn.Linear(hidden_size, intermediate_size)
        self.fc2 = nn.Linear(intermediate_size, hidden_size)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.dropout(F.gelu(self.fc1(x))))


class _EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.attn = _MultiHeadAttention(cfg.hidden_size, cfg.num_heads, cfg.dropout)
        self.ffn = _FeedForward(cfg.hidden_size, cfg.intermediate_size, cfg.dropout)
        self.ln1 = nn.LayerNorm(cfg.hidden_size)
        self.ln2 = nn.LayerNorm(cfg.hidden_size)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor, key_padding: torch.Tensor | None) -> torch.Tensor:
        x = self.ln1(x + self.dropout(self.attn(x, x, key_padding=key_padding)))
        return self.ln2(x + self.dropout(self.ffn(x)))


class _DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.self_attn = _MultiHeadAttention(cfg.hidden_size, cfg.num_heads, cfg.dropout)
        self.cross_attn = _MultiHeadAttention(cfg.hidden_size, cfg.num_heads, cfg.dropout)
        self.ffn = _FeedForward(cfg.hidden_size, cfg.intermediate_size, cfg.dropout)
        self.ln1 = nn.LayerNorm(cfg.hidden_size)
        self.ln2 = nn.LayerNorm(cfg.hidden_size)
        self.ln3 = nn.LayerNorm(cfg.hidden_size)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(
        self,
        x: torch.Tensor,
        memory: torch.Tensor,
        memory_padding: torch.Tensor | None,
    ) -> torch.Tensor:
        x = self.ln1(x + self.dropout(self.self_attn(x, x, causal=True)))
        x = self.ln2(x + self.dropout(self.cross_attn(x, memory, key_padding=memory_padding)))
        return self.ln3(x + self.dropout(self.ffn(x)))


class TabTransformer(nn.Module):
    """Bidirectional encoder, causal decoder, shared token embedding."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary):
        super().__init__()
        if config.vocab_size != len(vocab):
            raise ValueError(
                f"config.vocab_size {config.vocab_size} does not match vocabulary size {len(vocab)}"
            )
        self.config = config
        self.vocab_sha256 = vocab.sha256()
        self.pad_id = vocab.pad_id
        self.bos_id = vocab.bos_id
        self.mask_id = vocab.mask_id
        self.string_ids = tuple(vocab.string_ids)
        self.tok_emb = nn.Embedding(config.vocab_size, config.hidden_size)
        self.enc_pos = nn.Embedding(config.max_positions, config.hidden_size)
        self.dec_pos = nn.Embedding(config.max_positions, config.hidden_size)
        self.enc_ln_emb = nn.LayerNorm(config.hidden_size)
        self.dec_ln_emb = nn.LayerNorm(config.hidden_size)
        self.enc_layers = nn.ModuleList(_EncoderLayer(config) for _ in range(config.num_layers))
        self.dec_layers = nn.ModuleList(_DecoderLayer(config) for _ in range(config.num_layers))
        self.emb_dropout = nn.Dropout(config.dropout)
        self.apply(self._init_weights)

    @staticmethod
    def _init_weights(module: nn.Module) -> None:
        if isinstance(module, nn.Linear):
            nn.init.normal_(module.weight, std=0.02)
            nn.init.zeros_(module.bias)
        elif isinstance(module, nn.Embedding):
            nn.init.normal_(module.weight, std=0.02)

    # -- plumbing ------------------------------------------------------------

    def _as_batch(self, ids) -> tuple[torch.Tensor, bool]:
        t = torch.as_tensor(ids, dtype=torch.long)
        if t.dim() == 1:
            return t.unsqueeze(0), True
        if t.dim() == 2:
            return t, False
        raise ContractViolationError(f"token ids must be 1-D or 2-D, got shape {tuple(t.shape)}")

    def _check_length(self, t: torch.Tensor, what: str) -> None:
        if t.shape[1] > self.config.max_positions:
            raise ContractViolationError(
                f"{what} length {t.shape[1]} exceeds max_positions {self.config.max_positions}"
            )

    def _embed(self, ids: torch.Tensor, pos: nn.Embedding, ln: nn.LayerNorm) -> torch.Tensor:
        positions = torch.arange(ids.shape[1], device=ids.device)
        return self.emb_dropout(ln(self.tok_emb(ids) + pos(positions)[None, :, :]))

    def _padding_mask(self, ids: torch.Tensor) -> torch.Tensor | None:
        mask = ids == self.pad_id
        return mask if bool(mask.any()) else None

    # -- forward passes --------------------------------------------------------

    def encode(self, encoder_ids) -> tuple[torch.Tensor, torch.Tensor | None]:
        ids, _ = self._as_batch(encoder_ids)
        self._check_length(ids, "encoder input")
        padding = self._padding_mask(ids)
        x = self._embed(ids, self.enc_pos, self.enc_ln_emb)
        for layer in self.enc_layers:
            x = layer(x, padding)
        return x, padding

    def decode(
        self,
        decoder_ids,
        memory: torch.Tensor,
        memory_padding: torch.Tensor | None = None,
    ) -> torch.Tensor:
        ids, squeeze = self._as_batch(decoder_ids)
        self._check_length(ids, "decoder input")
        if memory.dim() == 2:
            memory = memory.unsqueeze(0)
        if memory.shape[0] == 1 and ids.shape[0] > 1:
            memory = memory.expand(ids.shape[0], -1, -1)
            if memory_padding is not None:
                memory_padding = memory_padding.expand(ids.shape[0], -1)
        x = self._embed(ids, self.dec_pos, self.dec_ln_emb)
        for layer in self.dec_layers:
            x = layer(x, memory, memory_padding)
        logits = F.linear(x, self.tok_emb.weight)  # tied output projection
        return logits.squeeze(0) if squeeze else logits

    def forward(self, encoder_ids, decoder_ids) -> torch.Tensor:
        """Logits over the vocabulary at every decoder position."""
        memory, padding = self.encode(encoder_ids)
        return self.decode(decoder_ids, memory, padding)

    # -- inference head --------------------------------------------------------

    def _check_string_position(self, prefix_len: int) -> None:
        # decoder position 0 is BOS; note-frame index is position - 1
        if prefix_len < 1 or (prefix_len - 1) % TOKENS_PER_NOTE != 1:
            raise ContractViolationError(
                f"next decoder position {prefix_len} is not a string slot"
            )

    def string_probs_from_memory(
        self,
        memory: torch.Tensor,
        memory_padding: torch.Tensor | None,
        decoder_prefixes,
    ) -> torch.Tensor:
        """[batch, 6] probabilities over strings 1..6 at the next position."""
        ids, squeeze = self._as_batch(decoder_prefixes)
        self._check_string_position(ids.shape[1])
        logits = self.decode(ids, memory, memory_padding)
        string_logits = logits[:, -1, list(self.string_ids)]
        probs = torch.softmax(string_logits, dim=-1)
        return probs.squeeze(0) if squeeze else probs

    def string_distribution(self, encoder_ids, decoder_prefix) -> torch.Tensor:
        """Probability vector over the six strings for the next decoder slot."""
        memory, padding = self.encode(encoder_ids)
        return self.string_probs_from_memory(memory, padding, decoder_prefix)


def build_model(config: ModelConfig, vocab: Vocabulary) -> TabTransformer:
    if config.vocab_size <= 0:
        config = replace(config, vocab_size=len(vocab))
    return TabTransformer(config, vocab)


# --- training ----------------------------------------------------------------


def mlm_batch(batch_ids: torch.Tensor, vocab) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(encoder input, decoder input, targets) for a batch of token frames.

    `vocab` may be a Vocabulary or a model; only string_ids/mask_id/bos_id
    are used.
    """
    batch_ids = torch.as_tensor(batch_ids, dtype=torch.long)
    string_ids = torch.tensor(vocab.string_ids)
    enc = torch.where(torch.isin(batch_ids, string_ids), vocab.mask_id, batch_ids)
    bos = torch.full((batch_ids.shape[0], 1), vocab.bos_id, dtype=torch.long)
    dec_in = torch.cat([bos, batch_ids[:, :-1]], dim=1)
    return enc, dec_in, batch_ids


def string_masked_loss(
    model: TabTransformer,
    encoder_ids: torch.Tensor,
    decoder_ids: torch.Tensor,
    targets: torch.Tensor,
) -> torch.Tensor:
    """Cross entropy restricted to positions whose target is a string token."""
    logits = model(encoder_ids, decoder_ids)
    mask = torch.isin(targets, torch.tensor(model.string_ids))
    if not bool(mask.any()):
        raise ContractViolationError("batch contains no string targets")
    return F.cross_entropy(logits[mask], targets[mask])


@dataclass
class CurvePoint:
    step: int
    lr: float
    loss: float


def loss_curve_csv(curve: Sequence[CurvePoint]) -> str:
    lines = ["step,lr,loss"]
    lines.extend(f"{p.step},{p.lr:.10g},{p.loss:.10g}" for p in curve)
    return "\n".join(lines) + "\n"


def train(
    model: TabTransformer,
    examples: np.ndarray | Sequence[Sequence[int]],
    config: TrainConfig,
    phase: str = "pretrain",
    start_step: int = 0,
) -> tuple["Checkpoint", list[CurvePoint]]:
    """Optimize the string-masked objective; returns checkpoint and loss curve.

    Every example must be a full 50-note (250-token) frame, PAD-filled when
    the source chunk was shorter.
    """
    data = torch.as_tensor(np.asarray(examples), dtype=torch.long)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("training requires a non-empty 2-D example array")
    if data.shape[1] != EXAMPLE_TOKENS:
        raise ValueError(f"examples must be {EXAMPLE_TOKENS} tokens wide, got {data.shape[1]}")

    lr = config.resolved_lr(phase)
    torch.manual_seed(config.seed)
    norm_params = {
        f"{mod_name}.{leaf}" if mod_name else leaf
        for mod_name, module in model.named_modules()
        if isinstance(module, nn.LayerNorm)
        for leaf, _ in module.named_parameters()
    }
    decay, no_decay = [], []
    for name, param in model.named_parameters():
        (no_decay if name.endswith("bias") or name in norm_params else decay).append(param)
    optimizer = torch.optim.AdamW(
        [
            {"params": decay, "weight_decay": config.weight_decay},
            {"params": no_decay, "weight_decay": 0.0},
        ],
        lr=lr,
    )
    batches_per_epoch = math.ceil(data.shape[0] / config.batch_size)
    total_steps = config.epochs * batches_per_epoch
    warmup_steps = int(total_steps * config.warmup_fraction)

    def lr_factor(step: int) -> float:
        if warmup_steps and step < warmup_steps:
            return (step + 1) / warmup_steps
        if total_steps == warmup_steps:
            return 1.0
        return max(0.0, (total_steps - step) / (total_steps - warmup_steps))

    scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, lr_factor)
    shuffler = torch.Generator().manual_seed(config.seed)

    string_ids = torch.tensor(model.string_ids)
    curve: list[CurvePoint] = []
    step = 0
    model.train()
    for _epoch in range(config.epochs):
        order = torch.randperm(data.shape[0], generator=shuffler)
        for b in range(batches_per_epoch):
            batch_index = order[b * config.batch_size : (b + 1) * config.batch_size]
            batch = data[batch_index]
            enc, dec_in, targets = mlm_batch(batch, model)
            logits = model(enc, dec_in)
            mask = torch.isin(targets, string_ids)
            loss = F.cross_entropy(logits[mask], targets[mask])
            if not torch.isfinite(loss):
                raise ValueError(
                    f"non-finite loss at step {step} (batch ids {batch_index.tolist()})"
                )
            optimizer.zero_grad()
            loss.backward()
            if config.grad_clip:
                nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            curve.append(CurvePoint(start_step + step, scheduler.get_last_lr()[0], loss.item()))
            optimizer.step()
            scheduler.step()
            step += 1
    model.eval()
    return checkpoint_from_model(model, step=start_step + step), curve


# --- checkpoints ---------------------------------------------------------------


@dataclass
class Checkpoint:
    config: ModelConfig
    vocab_sha256: str
    step: int
    params: dict[str, np.ndarray] = field(default_factory=dict)


def checkpoint_from_model(model: TabTransformer, step: int = 0) -> Checkpoint:
    params = {
        key: value.detach().cpu().numpy().astype(np.float32)
        for key, value in model.state_dict().items()
    }
    return Checkpoint(config=model.config, vocab_sha256=model.vocab_sha256, step=step, params=params)


def model_from_checkpoint(ckpt: Checkpoint, vocab: Vocabulary) -> TabTransformer:
    if vocab.sha256() != ckpt.vocab_sha256:
        raise VocabularyMismatchError(
            "checkpoint was trained against a different vocabulary"
        )
    model = TabTransformer(ckpt.config, vocab)
    state = {key: torch.from_numpy(value.copy()) for key, value in ckpt.params.items()}
    model.load_state_dict(state)
    model.eval()
    return model


def save_checkpoint(ckpt: Checkpoint) -> bytes:
    keys = sorted(ckpt.params)
    header = {
        "config": asdict(ckpt.config),
        "params": [{"key": k, "shape": list(ckpt.params[k].shape)} for k in keys],
        "step": ckpt.step,
        "vocab_sha256": ckpt.vocab_sha256,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    blob = bytearray(_CHECKPOINT_MAGIC)
    blob += len(header_bytes).to_bytes(8, "little")
    blob += header_bytes
    for key in keys:
        arr = np.ascontiguousarray(ckpt.params[key], dtype=np.float32)
        blob += arr.tobytes()
    return bytes(blob)


def load_checkpoint(data: bytes) -> Checkpoint:
    if data[: len(_CHECKPOINT_MAGIC)] != _CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    pos = len(_CHECKPOINT_MAGIC)
    if len(data) < pos + 8:
        raise CheckpointError("checkpoint truncated in header length")
    header_len = int.from_bytes(data[pos : pos + 8], "little")
    pos += 8
    if len(data) < pos + header_len:
        raise CheckpointError("checkpoint truncated in header")
    try:
        header = json.loads(data[pos : pos + header_len])
        config = ModelConfig(**header["config"])
        entries = [(row["key"], tuple(row["shape"])) for row in header["params"]]
        step = header["step"]
        vocab_sha = header["vocab_sha256"]
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    pos += header_len
    params: dict[str, np.ndarray] = {}
    for key, shape in entries:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        if len(data) < pos + nbytes:
            raise CheckpointError(f"checkpoint truncated in tensor {key!r}")
        params[key] = np.frombuffer(data[pos : pos + nbytes], dtype=np.float32).reshape(shape).copy()
        pos += nbytes
    if pos != len(data):
        raise CheckpointError(f"{len(data) - pos} trailing bytes after tensor data")
    return Checkpoint(config=config, vocab_sha256=vocab_sha, step=step, params=params)
