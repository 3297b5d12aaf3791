"""The system-side model p(x|z): attention + copy reconstruction from keywords.

A bidirectional LSTM reads the keywords; a unidirectional LSTM generates the
target left to right, taking the previous token embedding concatenated with
the reader's final hidden state at every step. Each step mixes a vocabulary
softmax with a copy distribution over keyword positions through a learned
scalar gate, so out-of-vocabulary keywords stay reachable via copying.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import BOS, Sentence, Vocabulary
from .encoder import KeywordSequence, ProbabilityEncoder, init_uniform_

PROB_FLOOR = 1e-12


class TrainingDivergence(RuntimeError):
    """Non-finite loss or gradient during optimization."""


@dataclass(frozen=True)
class Prediction:
    """A decoded sentence with its score and per-step provenance.

    Each source is ("gen", vocab_id) or ("copy", keyword_position).
    """

    tokens: tuple[str, ...]
    log_prob: float
    sources: tuple[tuple[str, int], ...]


class KeywordDecoder(nn.Module):
    def __init__(self, vocab_size: int, emb_dim: int = 300, hidden: int = 300):
        super().__init__()
        self.vocab_size = vocab_size
        self.emb_dim = emb_dim
        self.hidden = hidden
        self.embedding = nn.Embedding(vocab_size, emb_dim)
        self.reader = nn.LSTM(emb_dim, hidden, batch_first=True, bidirectional=True)
        self.generator = nn.LSTM(emb_dim + 2 * hidden, hidden, batch_first=True)
        self.attn_in = nn.Linear(2 * hidden, hidden, bias=False)
        self.out = nn.Linear(3 * hidden, hidden)
        self.vocab_proj = nn.Linear(hidden, vocab_size)
        self.copy_gate = nn.Linear(hidden, 1)
        init_uniform_(self)

    @property
    def dtype(self):
        return self.vocab_proj.weight.dtype

    def read_keywords(self, ids: torch.Tensor, lengths: torch.Tensor):
        """Encode padded keyword ids -> (states (B,S,2h), final (B,2h))."""
        emb = self.embedding(ids)
        packed = nn.utils.rnn.pack_padded_sequence(
            emb, lengths.cpu(), batch_first=True, enforce_sorted=False
        )
        states, (h_n, _) = self.reader(packed)
        states, _ = nn.utils.rnn.pad_packed_sequence(
            states, batch_first=True, total_length=ids.shape[1]
        )
        final = torch.cat([h_n[0], h_n[1]], dim=-1)
        return states, final

    def decode_steps(self, prev_emb, reader_final, reader_states, attn_mask, state=None):
        """One or more generator steps under teacher forcing.

        prev_emb: (B, T, emb) embeddings of previous tokens.
        Returns gen probs (B,T,V), attention (B,T,S), gate (B,T,1), lstm state.
        The vocabulary softmax masks out pad and bos, so each step's mixed
        distribution is over (vocab minus pad/bos) union keyword positions.
        """
        B, T, _ = prev_emb.shape
        inputs = torch.cat([prev_emb, reader_final.unsqueeze(1).expand(B, T, -1)], dim=-1)
        out, state = self.generator(inputs, state)
        keys = self.attn_in(reader_states)
        scores = torch.bmm(out, keys.transpose(1, 2))
        scores = scores.masked_fill(~attn_mask.unsqueeze(1), float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        ctx = torch.bmm(attn, reader_states)
        feat = torch.tanh(self.out(torch.cat([ctx, out], dim=-1)))
        logits = self.vocab_proj(feat)
        logits[..., Vocabulary.pad_id] = float("-inf")
        logits[..., Vocabulary.bos_id] = float("-inf")
        vocab_probs = torch.softmax(logits, dim=-1)
        gate = torch.sigmoid(self.copy_gate(feat))
        return vocab_probs, attn, gate, state


@dataclass
class ReaderBatch:
    """Padded keyword tensors plus per-example OOV bookkeeping."""

    ids: torch.Tensor          # (B, S) in-vocab ids (unk for OOV)
    ext_ids: torch.Tensor      # (B, S) extended ids (V + oov index for OOV)
    lengths: torch.Tensor      # (B,)
    mask: torch.Tensor         # (B, S) bool, True at real positions
    surfaces: list[tuple[str, ...]]
    oov_lists: list[list[str]]
    max_oov: int


def make_reader_batch(
    keywords_list: list[KeywordSequence], vocab: Vocabulary, device="cpu"
) -> ReaderBatch:
    """Batch keyword sequences; empty keywords become a single start token."""
    surfaces = [kw.tokens if len(kw.tokens) > 0 else (BOS,) for kw in keywords_list]
    oov_lists: list[list[str]] = []
    for toks in surfaces:
        oov: list[str] = []
        for t in toks:
            if t not in vocab and t not in oov:
                oov.append(t)
        oov_lists.append(oov)
    max_oov = max((len(o) for o in oov_lists), default=0)
    S = max(len(t) for t in surfaces)
    B = len(surfaces)
    ids = torch.full((B, S), Vocabulary.pad_id, dtype=torch.long, device=device)
    ext = torch.full((B, S), Vocabulary.pad_id, dtype=torch.long, device=device)
    lengths = torch.zeros(B, dtype=torch.long, device=device)
    for b, toks in enumerate(surfaces):
        lengths[b] = len(toks)
        for s, t in enumerate(toks):
            ids[b, s] = vocab.id_of(t)
            ext[b, s] = (
                vocab.stoi[t] if t in vocab else len(vocab) + oov_lists[b].index(t)
            )
    pos = torch.arange(S, device=device).unsqueeze(0)
    mask = pos < lengths.unsqueeze(1)
    return ReaderBatch(ids, ext, lengths, mask, surfaces, oov_lists, max_oov)


def target_ext_ids(tokens, vocab: Vocabulary, oov_list: list[str]) -> list[int]:
    """Extended ids for target tokens: vocab id, copyable OOV slot, else unk."""
    out = []
    for t in tokens:
        if t in vocab:
            out.append(vocab.stoi[t])
        elif t in oov_list:
            out.append(len(vocab) + oov_list.index(t))
        else:
            out.append(Vocabulary.unk_id)
    return out


def mixed_distributions(model, vocab_probs, attn, gate, reader: ReaderBatch):
    """Combine generate/copy routes into extended-vocabulary distributions.

    Returns (gen_part, copy_part), each (B, T, V + max_oov); their sum is the
    mixed distribution, with identical surface tokens merged by extended id.
    """
    B, T, V = vocab_probs.shape
    ext_size = V + reader.max_oov
    gen_part = torch.zeros(B, T, ext_size, dtype=vocab_probs.dtype, device=vocab_probs.device)
    gen_part[..., :V] = gate * vocab_probs
    copy = (1.0 - gate) * attn * reader.mask.unsqueeze(1)
    copy_part = torch.zeros_like(gen_part)
    copy_part.scatter_add_(2, reader.ext_ids.unsqueeze(1).expand(B, T, -1), copy)
    return gen_part, copy_part


def sequence_log_probs(
    model: KeywordDecoder,
    keywords_list: list[KeywordSequence],
    targets: list[Sentence],
    vocab: Vocabulary,
) -> torch.Tensor:
    """Teacher-forced log p(x|z) for a batch; differentiable, shape (B,).

    Targets are scored token by token through end-of-sequence; target tokens
    absent from both vocabulary and keywords fall back to the unknown token.
    """
    device = next(model.parameters()).device
    reader = make_reader_batch(keywords_list, vocab, device)
    states, final = model.read_keywords(reader.ids, reader.lengths)
    B = len(targets)
    T = max(len(t) for t in targets) + 1
    prev_ids = torch.full((B, T), Vocabulary.pad_id, dtype=torch.long, device=device)
    tgt_ext = torch.zeros(B, T, dtype=torch.long, device=device)
    tgt_len = torch.zeros(B, dtype=torch.long, device=device)
    for b, sent in enumerate(targets):
        toks = sent.tokens
        tgt_len[b] = len(toks) + 1
        prev_ids[b, 0] = Vocabulary.bos_id
        for i, t in enumerate(toks):
            prev_ids[b, i + 1] = vocab.id_of(t)
        ext = target_ext_ids(toks, vocab, reader.oov_lists[b]) + [Vocabulary.eos_id]
        tgt_ext[b, : len(ext)] = torch.tensor(ext, device=device)
    prev_emb = model.embedding(prev_ids)
    vocab_probs, attn, gate, _ = model.decode_steps(prev_emb, final, states, reader.mask)
    gen_part, copy_part = mixed_distributions(model, vocab_probs, attn, gate, reader)
    probs = (gen_part + copy_part).gather(2, tgt_ext.unsqueeze(-1)).squeeze(-1)
    logp = torch.log(probs.clamp_min(PROB_FLOOR))
    pos = torch.arange(T, device=device).unsqueeze(0)
    valid = (pos < tgt_len.unsqueeze(1)).to(logp.dtype)
    return (logp * valid).sum(dim=1)


def reconstruction_log_prob(
    model: KeywordDecoder, keywords: KeywordSequence, target: Sentence, vocab: Vocabulary
) -> float:
    """log p(x|z) for one (keywords, target) pair."""
    with torch.no_grad():
        return float(sequence_log_probs(model, [keywords], [target], vocab)[0].item())


def _surface_of(ext_id: int, vocab: Vocabulary, oov_list: list[str]) -> str:
    return vocab.itos[ext_id] if ext_id < len(vocab) else oov_list[ext_id - len(vocab)]


def _source_of(gen_p, copy_p, attn_row, kw_ext_row, ext_id) -> tuple[str, int]:
    if copy_p > gen_p:
        match = (kw_ext_row == ext_id).to(attn_row.dtype) * attn_row
        return ("copy", int(match.argmax().item()))
    return ("gen", int(ext_id))


def greedy_decode_batch(
    model: KeywordDecoder,
    keywords_list: list[KeywordSequence],
    vocab: Vocabulary,
    max_len: int = 20,
) -> list[Prediction]:
    """Greedy argmax decoding over the mixed distribution, batched.

    Hypotheses that hit max_len without emitting end-of-sequence are forced
    to a final end-of-sequence step so every returned score equals the
    teacher-forced log probability of the returned tokens.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    device = next(model.parameters()).device
    with torch.no_grad():
        reader = make_reader_batch(keywords_list, vocab, device)
        states, final = model.read_keywords(reader.ids, reader.lengths)
        B = len(keywords_list)
        prev = torch.full((B,), Vocabulary.bos_id, dtype=torch.long, device=device)
        state = None
        alive = np.ones(B, dtype=bool)
        tokens: list[list[str]] = [[] for _ in range(B)]
        sources: list[list[tuple[str, int]]] = [[] for _ in range(B)]
        logps = np.zeros(B, dtype=np.float64)
        for _ in range(max_len):
            prev_emb = model.embedding(prev).unsqueeze(1)
            vocab_probs, attn, gate, state = model.decode_steps(
                prev_emb, final, states, reader.mask, state
            )
            gen_part, copy_part = mixed_distributions(model, vocab_probs, attn, gate, reader)
            dist = (gen_part + copy_part)[:, 0]
            choice = dist.argmax(dim=-1)
            for b in range(B):
                if not alive[b]:
                    continue
                ext_id = int(choice[b].item())
                logps[b] += float(
                    torch.log(dist[b, ext_id].clamp_min(PROB_FLOOR)).item()
                )
                if ext_id == Vocabulary.eos_id:
                    alive[b] = False
                    continue
                tokens[b].append(_surface_of(ext_id, vocab, reader.oov_lists[b]))
                sources[b].append(
                    _source_of(
                        gen_part[b, 0, ext_id],
                        copy_part[b, 0, ext_id],
                        attn[b, 0],
                        reader.ext_ids[b],
                        ext_id,
                    )
                )
            prev = torch.where(
                choice < len(vocab), choice, torch.full_like(choice, Vocabulary.unk_id)
            )
            if not alive.any():
                break
        if alive.any():
            prev_emb = model.embedding(prev).unsqueeze(1)
            vocab_probs, attn, gate, state = model.decode_steps(
                prev_emb, final, states, reader.mask, state
            )
            gen_part, copy_part = mixed_distributions(model, vocab_probs, attn, gate, reader)
            dist = (gen_part + copy_part)[:, 0]
            for b in range(B):
                if alive[b]:
                    logps[b] += float(
                        torch.log(dist[b, Vocabulary.eos_id].clamp_min(PROB_FLOOR)).item()
                    )
    return [
        Prediction(tokens=tuple(tokens[b]), log_prob=logps[b], sources=tuple(sources[b]))
        for b in range(B)
    ]


def greedy_decode(
    model: KeywordDecoder, keywords: KeywordSequence, vocab: Vocabulary, max_len: int = 20
) -> Prediction:
    return greedy_decode_batch(model, [keywords], vocab, max_len)[0]


def beam_decode(
    model: KeywordDecoder,
    keywords: KeywordSequence,
    vocab: Vocabulary,
    beam_width: int = 5,
    k: int = 3,
    max_len: int = 20,
) -> list[Prediction]:
    """Length-synchronized beam search returning up to k completed sequences.

    At every step all alive hypotheses expand over the full mixed
    distribution and the top beam_width expansions survive; expansions
    ending in end-of-sequence move to the completed pool. Hypotheses still
    alive at max_len are force-completed with the end-of-sequence step, so
    scores always equal the teacher-forced log probability of the tokens.
    """
    if not (1 <= k <= beam_width):
        raise ValueError(f"need 1 <= k={k} <= beam_width={beam_width}")
    device = next(model.parameters()).device
    with torch.no_grad():
        reader = make_reader_batch([keywords], vocab, device)
        oov_list = reader.oov_lists[0]
        base_states, base_final = model.read_keywords(reader.ids, reader.lengths)

        # Alive beam state: ext-id paths, running scores, lstm states.
        paths: list[list[int]] = [[]]
        path_sources: list[list[tuple[str, int]]] = [[]]
        scores = torch.zeros(1, dtype=torch.float64)
        prev = torch.full((1,), Vocabulary.bos_id, dtype=torch.long, device=device)
        state = None
        finished: list[tuple[float, list[int], list[tuple[str, int]]]] = []

        for step in range(max_len + 1):
            n = len(paths)
            states_rep = base_states.expand(n, -1, -1)
            final_rep = base_final.expand(n, -1)
            mask_rep = reader.mask.expand(n, -1)
            prev_emb = model.embedding(prev).unsqueeze(1)
            vocab_probs, attn, gate, new_state = model.decode_steps(
                prev_emb, final_rep, states_rep, mask_rep, state
            )
            rep = ReaderBatch(
                reader.ids.expand(n, -1), reader.ext_ids.expand(n, -1),
                reader.lengths.expand(n), mask_rep, reader.surfaces * n,
                reader.oov_lists * n, reader.max_oov,
            )
            gen_part, copy_part = mixed_distributions(model, vocab_probs, attn, gate, rep)
            dist = (gen_part + copy_part)[:, 0]
            logp = torch.log(dist.clamp_min(PROB_FLOOR)).to(torch.float64)
            if step == max_len:
                for i in range(n):
                    total = float(scores[i] + logp[i, Vocabulary.eos_id])
                    finished.append((total, paths[i], path_sources[i]))
                break
            totals = (scores.unsqueeze(1) + logp).reshape(-1)
            width = min(beam_width, totals.shape[0])
            top = torch.topk(totals, width)
            ext_size = logp.shape[1]
            new_paths, new_sources, new_scores, new_prev, keep_idx = [], [], [], [], []
            for flat, val in zip(top.indices.tolist(), top.values.tolist()):
                hyp, ext_id = divmod(flat, ext_size)
                if ext_id == Vocabulary.eos_id:
                    finished.append((val, paths[hyp], path_sources[hyp]))
                    continue
                src = _source_of(
                    gen_part[hyp, 0, ext_id], copy_part[hyp, 0, ext_id],
                    attn[hyp, 0], reader.ext_ids[0], ext_id,
                )
                new_paths.append(paths[hyp] + [ext_id])
                new_sources.append(path_sources[hyp] + [src])
                new_scores.append(val)
                new_prev.append(ext_id if ext_id < len(vocab) else Vocabulary.unk_id)
                keep_idx.append(hyp)
            if not new_paths:
                break
            paths, path_sources = new_paths, new_sources
            scores = torch.tensor(new_scores, dtype=torch.float64)
            prev = torch.tensor(new_prev, dtype=torch.long, device=device)
            idx = torch.tensor(keep_idx, dtype=torch.long, device=device)
            state = (new_state[0][:, idx], new_state[1][:, idx])

    finished.sort(key=lambda f: -f[0])
    return [
        Prediction(
            tokens=tuple(_surface_of(e, vocab, oov_list) for e in path),
            log_prob=score,
            sources=tuple(srcs),
        )
        for score, path, srcs in finished[:k]
    ]


@dataclass
class DecoderFitConfig:
    epochs: int = 20
    batch_size: int = 128
    lr: float = 1e-3
    seed: int = 0
    emb_dim: int = 64           # model size when the caller builds the decoder
    hidden: int = 64


def fit_decoder(
    model: KeywordDecoder,
    encoder: ProbabilityEncoder,
    split,
    config: DecoderFitConfig | None = None,
    rng: np.random.Generator | None = None,
) -> list[float]:
    """Train the decoder against a fixed encoder; returns per-epoch mean loss.

    Keywords are re-sampled from the encoder every epoch, matching training
    against the encoder's stochastic output rather than one frozen draw.
    """
    config = config or DecoderFitConfig()
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    data = list(split.train)
    history: list[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(data))
        total, count = 0.0, 0
        for start in range(0, len(data), config.batch_size):
            batch = [data[i] for i in order[start : start + config.batch_size]]
            keywords = [encoder.encode(s, "sampled", rng) for s in batch]
            logp = sequence_log_probs(model, keywords, batch, split.vocab)
            loss = -logp.mean()
            if not torch.isfinite(loss):
                raise TrainingDivergence(
                    f"non-finite decoder loss at epoch {epoch} batch {start // config.batch_size}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.item()) * len(batch)
            count += len(batch)
        history.append(total / count)
    return history
