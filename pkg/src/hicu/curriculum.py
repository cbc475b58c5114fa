"""Level-by-level curriculum training with knowledge transfer.

The driver trains the encoder/decoder pair one tree level at a time:
targets at level k are the ancestors of the positive leaves, the encoder
persists across levels, and each new level's query matrix is initialized
from its parents' trained columns.  Hyperbolic query correction and the
asymmetric loss plug into the same loop.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .checkpoint import read_container, write_container
from .data import Dataset, Document
from .icd import AugmentedLabelTree
from .losses import AslConfig, asl, bce
from .metrics import EvalResult, evaluate, macro_micro_f1
from .network import (
    AdamState,
    DecoderParams,
    EncoderParams,
    adam_step,
    backward,
    decoder_param_dict,
    encoder_param_dict,
    forward,
    init_encoder,
    init_fc,
    xavier_uniform,
)
from .poincare import PoincareEmbedding, embedding_for_level


@dataclass
class CurriculumConfig:
    epochs_per_level: tuple[int, ...] = (2, 3, 5, 10, 50)
    batch_size: int = 16
    lr: float = 1e-3
    correction: str = "none"  # none | add | concat
    loss: str = "bce"  # bce | asl
    asl: AslConfig = field(default_factory=AslConfig)
    early_stop_metric: str = "micro_f1"
    patience: int = 10
    transfer_output_layer: bool = False
    seed: int = 0
    d_e: int = 32
    d_f: int = 32
    kernel_size: int = 3
    finetune_embeddings: bool = True
    carry_adam: bool = False
    reinit_fc_per_level: bool = False
    fresh_final_decoder: bool = False
    p_at: tuple[int, ...] = (5, 8, 15)
    workers: int = 1

    def validate(self, k_max: int) -> None:
        if len(self.epochs_per_level) != k_max:
            raise ValueError(f"epochs_per_level must have {k_max} entries")
        if any(e < 0 for e in self.epochs_per_level) or self.epochs_per_level[-1] < 1:
            raise ValueError("per-level epochs must be nonnegative, final level >= 1")
        if self.batch_size < 1 or self.patience < 0 or self.workers < 1:
            raise ValueError("batch_size/workers must be >= 1 and patience >= 0")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.correction not in ("none", "add", "concat"):
            raise ValueError(f"unknown correction mode {self.correction!r}")
        if self.loss not in ("bce", "asl"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        self.asl.validate()

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainReport:
    records: list[dict]
    summary: dict
    config: dict
    seed: int
    wall_clock_s: float = 0.0  # printed, never serialized (reports stay byte-stable)

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
            final = {"event": "summary", "config": self.config, "seed": self.seed}
            final.update(self.summary)
            fh.write(json.dumps(final, sort_keys=True) + "\n")


@dataclass
class ModelState:
    encoder: EncoderParams
    decoder: DecoderParams
    level: int
    codes: list[str]


def knowledge_transfer(q_parent: np.ndarray, parent_map: np.ndarray) -> np.ndarray:
    """Child query columns initialized from their parents' columns."""
    parent_map = np.asarray(parent_map)
    if parent_map.size and (parent_map.min() < 0 or parent_map.max() >= q_parent.shape[1]):
        raise ValueError("parent map index out of range")
    return q_parent[:, parent_map].copy()


def init_level_decoder(
    prev: DecoderParams | None,
    tree: AugmentedLabelTree,
    k: int,
    cfg: CurriculumConfig,
    rng: np.random.Generator,
    d_h: int = 0,
) -> DecoderParams:
    """Decoder for level k: random at the first level, transferred afterwards."""
    n_labels = len(tree.level_labels(k))
    d_f = cfg.d_f
    if prev is None:
        q = xavier_uniform(rng, (d_f, n_labels), fan_in=d_f, fan_out=n_labels)
    else:
        pmap = tree.parent_index_map(k - 1)
        if len(pmap) != n_labels:
            raise ValueError(f"parent map size {len(pmap)} != level-{k} label count")
        q = knowledge_transfer(prev.Q, pmap)
    if prev is not None and cfg.transfer_output_layer:
        pmap = tree.parent_index_map(k - 1)
        w = prev.W[:, pmap].copy()
        b = prev.b[pmap].copy()
    else:
        w = xavier_uniform(rng, (d_f, n_labels), fan_in=d_f, fan_out=n_labels)
        b = np.zeros(n_labels)
    fc_w = fc_b = None
    if cfg.correction != "none":
        if prev is not None and not cfg.reinit_fc_per_level:
            fc_w, fc_b = prev.fc_w, prev.fc_b  # shared transform, trained continuously
        else:
            fc_w, fc_b = init_fc(rng, d_f, d_h, cfg.correction)
    return DecoderParams(Q=q, W=w, b=b, mode=cfg.correction, fc_w=fc_w, fc_b=fc_b)


def score_dataset(
    enc: EncoderParams,
    dec: DecoderParams,
    E_h: np.ndarray | None,
    docs: list[Document],
    batch_size: int = 64,
) -> np.ndarray:
    """Sigmoid scores for every document, batched over equal lengths."""
    scores = np.empty((len(docs), dec.n_labels))
    groups: dict[int, list[int]] = {}
    for i, doc in enumerate(docs):
        groups.setdefault(len(doc.tokens), []).append(i)
    for _, idxs in sorted(groups.items()):
        for lo in range(0, len(idxs), batch_size):
            chunk = idxs[lo : lo + batch_size]
            x = np.stack([docs[i].tokens for i in chunk])
            yhat, _ = forward(x, enc, dec, E_h)
            scores[chunk] = yhat
    return scores


class Trainer:
    """Resumable curriculum trainer over an augmented label tree."""

    def __init__(
        self,
        train: Dataset,
        valid: Dataset,
        tree: AugmentedLabelTree,
        emb: PoincareEmbedding | None,
        cfg: CurriculumConfig,
        word_embedding: np.ndarray | None = None,
        vocab_size: int | None = None,
        _defer_init: bool = False,
    ):
        cfg.validate(tree.k_max)
        if cfg.correction != "none" and emb is None:
            raise ValueError("hyperbolic correction requires trained embeddings")
        self.cfg = cfg
        self.tree = tree
        self.emb = emb
        self.train = train
        self.valid = valid
        self.codes = tree.level_labels(tree.k_max)
        self._check_labels(train)
        self._check_labels(valid)
        self.y_leaf_train = train.label_matrix(self.codes)
        self.y_leaf_valid = valid.label_matrix(self.codes)
        self.d_h = emb.d_h if emb is not None else 0
        if cfg.fresh_final_decoder:
            self.levels = [tree.k_max]
        else:
            self.levels = list(range(1, tree.k_max + 1))
        self.records: list[dict] = []
        if _defer_init:
            return
        if word_embedding is None and vocab_size is None:
            raise ValueError("either a word embedding matrix or vocab_size is required")
        self.rng = np.random.default_rng(cfg.seed)
        self.encoder = init_encoder(
            self.rng,
            vocab_size=vocab_size if word_embedding is None else word_embedding.shape[0],
            d_e=cfg.d_e,
            d_f=cfg.d_f,
            kernel_size=cfg.kernel_size,
            embedding=word_embedding,
            finetune_embeddings=cfg.finetune_embeddings,
        )
        self.level_pos = 0
        self.epoch_in_level = 0
        self.finished = False
        self.best_metric: float | None = None
        self.best_params: dict[str, np.ndarray] | None = None
        self.bad_epochs = 0
        self.decoder = init_level_decoder(
            None, tree, self.levels[0], cfg, self.rng, self.d_h
        ) if self.levels[0] == 1 or cfg.fresh_final_decoder else None
        if self.decoder is None:
            raise ValueError("curriculum must start at level 1")
        self._enter_level()
        self._skip_empty_levels()

    # -- setup helpers -------------------------------------------------

    def _check_labels(self, dataset: Dataset) -> None:
        leaves = set(self.codes)
        for doc in dataset.docs:
            for label in doc.labels:
                if label not in leaves:
                    raise ValueError(f"document {doc.id!r}: label {label!r} not a tree leaf")

    @property
    def level(self) -> int:
        return self.levels[self.level_pos]

    @property
    def at_final_level(self) -> bool:
        return self.level_pos == len(self.levels) - 1

    def _epochs_for(self, k: int) -> int:
        return self.cfg.epochs_per_level[k - 1]

    def _enter_level(self) -> None:
        k = self.level
        self.E_h = (
            embedding_for_level(self.emb, self.tree, k)
            if self.cfg.correction != "none"
            else None
        )
        self.y_train = self.tree.ancestor_targets(self.y_leaf_train, k)
        self.y_valid = self.tree.ancestor_targets(self.y_leaf_valid, k)
        self.params = {**encoder_param_dict(self.encoder), **decoder_param_dict(self.decoder)}
        if getattr(self, "adam", None) is not None and self.cfg.carry_adam:
            enc_keys = set(encoder_param_dict(self.encoder))
            self.adam = AdamState(
                lr=self.cfg.lr,
                t=self.adam.t,
                m={n: a for n, a in self.adam.m.items() if n in enc_keys},
                v={n: a for n, a in self.adam.v.items() if n in enc_keys},
            )
        else:
            self.adam = AdamState(lr=self.cfg.lr)

    def _advance_level(self) -> None:
        self.level_pos += 1
        self.epoch_in_level = 0
        self.decoder = init_level_decoder(
            self.decoder, self.tree, self.level, self.cfg, self.rng, self.d_h
        )
        self._enter_level()

    def _skip_empty_levels(self) -> None:
        while not self.at_final_level and self._epochs_for(self.level) == 0:
            self._advance_level()

    # -- training ------------------------------------------------------

    def _loss(self, logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
        if self.cfg.loss == "asl":
            return asl(logits, targets, self.cfg.asl)
        return bce(logits, targets)

    def _batch_step(self, idxs: np.ndarray) -> float:
        docs = [self.train.docs[i] for i in idxs]
        targets = self.y_train[idxs]
        lengths = {len(d.tokens) for d in docs}
        n = len(docs)
        if len(lengths) == 1:
            x = np.stack([d.tokens for d in docs])
            _, trace = forward(x, self.encoder, self.decoder, self.E_h)
            loss, dlogits = self._loss(trace.logits, targets)
            grads = backward(trace, self.encoder, self.decoder, dlogits / n)
        else:
            # variable lengths: accumulate per document in fixed order
            loss = 0.0
            grads = None
            for doc, y in zip(docs, targets):
                _, trace = forward(doc.tokens, self.encoder, self.decoder, self.E_h)
                doc_loss, dlogits = self._loss(trace.logits[0], y)
                loss += doc_loss
                g = backward(trace, self.encoder, self.decoder, dlogits[None, :] / n)
                if grads is None:
                    grads = g
                else:
                    for name in grads:
                        grads[name] += g[name]
        adam_step(self.params, grads, self.adam)
        return loss / n

    def step_epoch(self) -> dict:
        """Train one epoch at the current level, validate, maybe advance."""
        if self.finished:
            raise RuntimeError("training already finished")
        k = self.level
        perm = self.rng.permutation(len(self.train.docs))
        bs = self.cfg.batch_size
        batch_losses = []
        for lo in range(0, len(perm), bs):
            batch_losses.append(self._batch_step(perm[lo : lo + bs]))
        train_loss = float(np.mean(batch_losses))
        self.epoch_in_level += 1

        record = {
            "event": "epoch",
            "level": k,
            "epoch": self.epoch_in_level,
            "train_loss": train_loss,
        }
        scores = score_dataset(self.encoder, self.decoder, self.E_h, self.valid.docs)
        if self.at_final_level:
            result = self._evaluate_full(scores, self.y_valid)
            record.update({f"valid_{key}": v for key, v in result.items()})
            metric = result.get(self.cfg.early_stop_metric)
            if metric is None:
                raise ValueError(
                    f"early-stop metric {self.cfg.early_stop_metric!r} unavailable"
                )
            if self.best_metric is None or metric > self.best_metric:
                self.best_metric = metric
                self.best_params = {n: a.copy() for n, a in self.params.items()}
                self.bad_epochs = 0
            else:
                self.bad_epochs += 1
            if self.epoch_in_level >= self._epochs_for(k) or self.bad_epochs > self.cfg.patience:
                self.finished = True
        else:
            macro_f1, micro_f1 = macro_micro_f1(scores, self.y_valid)
            record["valid_macro_f1"] = macro_f1
            record["valid_micro_f1"] = micro_f1
            if self.epoch_in_level >= self._epochs_for(k):
                self._advance_level()
                self._skip_empty_levels()
        self.records.append(record)
        return record

    def _evaluate_full(self, scores: np.ndarray, targets: np.ndarray) -> dict:
        macro_f1, micro_f1 = macro_micro_f1(scores, targets)
        out = {"macro_f1": macro_f1, "micro_f1": micro_f1}
        try:
            result = evaluate(scores, targets, ks=self.cfg.p_at)
            out.update(result.to_dict())
        except ValueError:
            out.update({"macro_auc": None, "micro_auc": None})
        return out

    def run(self) -> tuple[ModelState, TrainReport]:
        t0 = time.perf_counter()
        while not self.finished:
            self.step_epoch()
        wall = time.perf_counter() - t0
        state = self.best_state()
        summary = {
            "best_metric": self.best_metric,
            "early_stop_metric": self.cfg.early_stop_metric,
            "epochs_run": len(self.records),
            "final_level": self.level,
        }
        report = TrainReport(
            records=list(self.records),
            summary=summary,
            config=self.cfg.to_dict(),
            seed=self.cfg.seed,
            wall_clock_s=wall,
        )
        return state, report

    def best_state(self) -> ModelState:
        params = self.best_params if self.best_params is not None else self.params
        enc = EncoderParams(
            embedding=np.array(params.get("embedding", self.encoder.embedding)),
            kernel=np.array(params["kernel"]),
            bias=np.array(params["bias"]),
            finetune_embeddings=self.encoder.finetune_embeddings,
        )
        dec = DecoderParams(
            Q=np.array(params["Q"]),
            W=np.array(params["W"]),
            b=np.array(params["b"]),
            mode=self.decoder.mode,
            fc_w=np.array(params["fc_w"]) if "fc_w" in params else None,
            fc_b=np.array(params["fc_b"]) if "fc_b" in params else None,
        )
        return ModelState(encoder=enc, decoder=dec, level=self.level, codes=list(self.codes))

    # -- checkpointing -------------------------------------------------

    def save(self, path, extra_meta: dict | None = None) -> None:
        meta = {
            "kind": "trainer",
            "config": self.cfg.to_dict(),
            "level_pos": self.level_pos,
            "level": self.level,
            "epoch_in_level": self.epoch_in_level,
            "finished": self.finished,
            "best_metric": self.best_metric,
            "bad_epochs": self.bad_epochs,
            "adam_t": self.adam.t,
            "rng_state": self.rng.bit_generator.state,
            "records": self.records,
            "codes": self.codes,
            "finetune_embeddings": self.encoder.finetune_embeddings,
        }
        if extra_meta:
            meta.update(extra_meta)
        arrays: dict[str, np.ndarray] = {}
        if not self.encoder.finetune_embeddings:
            arrays["frozen/embedding"] = self.encoder.embedding
        for name, arr in self.params.items():
            arrays[f"param/{name}"] = arr
        for name, arr in self.adam.m.items():
            arrays[f"adam_m/{name}"] = arr
        for name, arr in self.adam.v.items():
            arrays[f"adam_v/{name}"] = arr
        if self.best_params is not None:
            for name, arr in self.best_params.items():
                arrays[f"best/{name}"] = arr
        write_container(path, meta, arrays)

    @classmethod
    def load(
        cls,
        path,
        train: Dataset,
        valid: Dataset,
        tree: AugmentedLabelTree,
        emb: PoincareEmbedding | None,
    ) -> "Trainer":
        meta, arrays = read_container(path)
        if meta.get("kind") != "trainer":
            raise ValueError(f"{path}: not a trainer checkpoint")
        cfg_dict = dict(meta["config"])
        cfg_dict["epochs_per_level"] = tuple(cfg_dict["epochs_per_level"])
        cfg_dict["p_at"] = tuple(cfg_dict["p_at"])
        cfg_dict["asl"] = AslConfig(**cfg_dict["asl"])
        cfg = CurriculumConfig(**cfg_dict)
        self = cls(train, valid, tree, emb, cfg, _defer_init=True)
        self.rng = np.random.default_rng(cfg.seed)
        self.rng.bit_generator.state = meta["rng_state"]
        params = {n[len("param/"):]: arrays[n].copy() for n in arrays if n.startswith("param/")}
        finetune = meta["finetune_embeddings"]
        embedding = params["embedding"] if finetune else arrays["frozen/embedding"].copy()
        self.encoder = EncoderParams(
            embedding=embedding,
            kernel=params["kernel"],
            bias=params["bias"],
            finetune_embeddings=finetune,
        )
        self.decoder = DecoderParams(
            Q=params["Q"],
            W=params["W"],
            b=params["b"],
            mode=cfg.correction,
            fc_w=params.get("fc_w"),
            fc_b=params.get("fc_b"),
        )
        self.level_pos = meta["level_pos"]
        self.epoch_in_level = meta["epoch_in_level"]
        self.finished = meta["finished"]
        self.best_metric = meta["best_metric"]
        self.bad_epochs = meta["bad_epochs"]
        self.records = list(meta["records"])
        best = {n[len("best/"):]: arrays[n].copy() for n in arrays if n.startswith("best/")}
        self.best_params = best or None
        k = self.level
        self.E_h = (
            embedding_for_level(self.emb, self.tree, k)
            if cfg.correction != "none"
            else None
        )
        self.y_train = self.tree.ancestor_targets(self.y_leaf_train, k)
        self.y_valid = self.tree.ancestor_targets(self.y_leaf_valid, k)
        self.params = {**encoder_param_dict(self.encoder), **decoder_param_dict(self.decoder)}
        self.adam = AdamState(
            lr=cfg.lr,
            t=meta["adam_t"],
            m={n[len("adam_m/"):]: arrays[n].copy() for n in arrays if n.startswith("adam_m/")},
            v={n[len("adam_v/"):]: arrays[n].copy() for n in arrays if n.startswith("adam_v/")},
        )
        return self


def run_hicu(
    train: Dataset,
    valid: Dataset,
    tree: AugmentedLabelTree,
    emb: PoincareEmbedding | None,
    cfg: CurriculumConfig,
    word_embedding: np.ndarray | None = None,
    vocab_size: int | None = None,
) -> tuple[ModelState, TrainReport]:
    trainer = Trainer(train, valid, tree, emb, cfg, word_embedding, vocab_size)
    return trainer.run()


def run_flat(
    train: Dataset,
    valid: Dataset,
    tree: AugmentedLabelTree,
    emb: PoincareEmbedding | None,
    cfg: CurriculumConfig,
    word_embedding: np.ndarray | None = None,
    vocab_size: int | None = None,
) -> tuple[ModelState, TrainReport]:
    """Single-round baseline: train directly at the final level."""
    zeros = (0,) * (tree.k_max - 1) + (cfg.epochs_per_level[-1],)
    flat_cfg = replace(cfg, epochs_per_level=zeros, fresh_final_decoder=True)
    trainer = Trainer(train, valid, tree, emb, flat_cfg, word_embedding, vocab_size)
    return trainer.run()


def inspect_attention(
    state: ModelState,
    tree: AugmentedLabelTree,
    emb: PoincareEmbedding | None,
    doc: Document,
    token_strings: list[str],
    label: str,
    top_n: int = 16,
) -> list[tuple[str, float]]:
    """Top-weighted input tokens for one label's attention column.

    Ties are broken by token position.
    """
    codes = tree.level_labels(tree.k_max)
    if label not in codes:
        raise ValueError(f"unknown label {label!r}")
    if len(token_strings) != len(doc.tokens):
        raise ValueError("token strings must align with the token index sequence")
    E_h = (
        embedding_for_level(emb, tree, tree.k_max)
        if state.decoder.mode != "none"
        else None
    )
    _, trace = forward(doc.tokens, state.encoder, state.decoder, E_h)
    col = trace.A[0][:, codes.index(label)]
    order = np.lexsort((np.arange(len(col)), -col))
    return [(token_strings[i], float(col[i])) for i in order[:top_n]]
