"""REST service for the human-in-the-loop annotation cycle.

Endpoints (JSON in/out; errors as ``{"code", "message", "details"}``):

    GET  /health
    POST /pools                          upload a pool of instances
    GET  /pools                          list pools
    POST /models                         create a model (zero-shot or seeded)
    GET  /models                         list models
    GET  /models/{id}                    resource summary + state digest
    POST /models/{id}/request-instances  select a batch to annotate
    POST /models/{id}/update             submit annotations, retrain
    POST /models/{id}/run                inference on raw texts
    GET  /models/{id}/evaluate           signal history + stop estimate

Persistence is one directory per model: ``meta.json``, an append-only
``ledger.jsonl``, the serialized model, ``snapshots.jsonl`` and a commit
marker, written in that order (write-ahead: the ledger is the source of
truth and the rest can be replayed deterministically from it). After a
restart the in-memory state re-serializes to the same digest.

Selection seeds derive from (model id, n_train), so repeated requests
without an intervening update return the same batch, and a page reload can
reconstruct the session from GET endpoints alone.

Instances uploaded with ``split: "test"`` are never selected, never enter
training and never enter the signal sample T.
"""

import base64
import hashlib
import json
import os
import threading
import time
import uuid
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import fsl, perfpred
from .corpus import LabelSet, TextInstance
from .encoder import EmbeddingCache, Encoder, HashedNgramEncoder, LookupEncoder, encode_batch_cached, load_precomputed
from .errors import ConflictError, LabelLoopError, StrategyUnavailableError, ValidationError
from .selection import PoolView, SelectionConfig, parse_strategy, select_with_trace
from .simulate import derive_seed


@dataclass
class ServiceConfig:
    data_dir: str = "labelloop-data"
    encoder_dim: int = 256
    vectors_path: str | None = None   # precomputed vectors instead of the built-in encoder
    forest_model_path: str | None = None
    tau: float = 0.95
    sample_t_size: int = 1000
    max_run_batch: int = 1000
    cv_folds: int = 5


class BusyError(LabelLoopError):
    """The model is retraining; retry shortly."""


# --- request/response schemas -------------------------------------------------

class LabelEntry(BaseModel):
    name: str
    description: str


class PoolInstance(BaseModel):
    id: str
    text: str
    label: str | None = None
    split: str = "train"


class CreatePoolRequest(BaseModel):
    name: str = "pool"
    instances: list[PoolInstance]


class SeedExample(BaseModel):
    instance_id: str
    label: str


class CreateModelRequest(BaseModel):
    name: str
    labels: list[LabelEntry]
    model_kind: str = "lt"
    pool_id: str
    seed_examples: list[SeedExample] = Field(default_factory=list)


class RequestInstancesRequest(BaseModel):
    strategy: str = "margin"
    k: int = 16
    reveal: bool = False


class Annotation(BaseModel):
    instance_id: str
    label: str


class UpdateRequest(BaseModel):
    annotations: list[Annotation]
    note: str | None = None
    async_training: bool = False


class RunRequest(BaseModel):
    texts: list[str]


# --- persistence ----------------------------------------------------------------

def _canonical(doc) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _write_atomic(path: str, data: bytes):
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def _snapshot_doc(snap: perfpred.IterationSnapshot, strategy: str) -> dict:
    doc = {
        "iter": snap.iter, "n_train": snap.n_train, "cv_f1": snap.cv_f1,
        "neg_entropy": snap.neg_entropy, "max_prob": snap.max_prob, "margin": snap.margin,
        "agreement": snap.agreement, "neg_kl": snap.neg_kl, "strategy": strategy,
    }
    if snap.posteriors_T is not None:
        doc["posteriors_T"] = base64.b64encode(
            np.asarray(snap.posteriors_T, dtype="<f4").tobytes()).decode("ascii")
        doc["t_size"] = int(snap.posteriors_T.shape[0])
    return doc


def _snapshot_from_doc(doc: dict, n_labels: int) -> perfpred.IterationSnapshot:
    posteriors = None
    if "posteriors_T" in doc:
        raw = base64.b64decode(doc["posteriors_T"])
        posteriors = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        posteriors = posteriors.reshape(doc["t_size"], n_labels)
    return perfpred.IterationSnapshot(
        iter=doc["iter"], n_train=doc["n_train"], cv_f1=doc["cv_f1"],
        neg_entropy=doc["neg_entropy"], max_prob=doc["max_prob"], margin=doc["margin"],
        agreement=doc["agreement"], neg_kl=doc["neg_kl"], posteriors_T=posteriors,
    )


@dataclass
class PoolState:
    pool_id: str
    name: str
    instances: list[TextInstance]
    splits: dict[str, str]

    @property
    def trainable(self) -> list[TextInstance]:
        return [i for i in self.instances if self.splits.get(i.id) != "test"]


@dataclass
class ModelState:
    model_id: str
    name: str
    kind: str
    label_set: LabelSet
    pool_id: str
    model: object
    ledger: list[dict] = field(default_factory=list)           # {batch, instance_id, label, ts}
    snapshots: list[dict] = field(default_factory=list)        # serialized snapshot docs
    t_ids: list[str] = field(default_factory=list)
    status: str = "ready"
    strategy: str = "random"
    lock: threading.Lock = field(default_factory=threading.Lock)

    @property
    def labeled_ids(self) -> set[str]:
        return {row["instance_id"] for row in self.ledger}

    @property
    def n_train(self) -> int:
        return len(self.ledger)


class ServiceState:
    """All in-memory state plus the persistence layer."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        os.makedirs(os.path.join(config.data_dir, "pools"), exist_ok=True)
        os.makedirs(os.path.join(config.data_dir, "models"), exist_ok=True)
        if config.vectors_path:
            self.encoder: Encoder = LookupEncoder(load_precomputed(config.vectors_path))
        else:
            self.encoder = HashedNgramEncoder(dim=config.encoder_dim)
        cache_dir = os.path.join(
            config.data_dir, "cache",
            hashlib.sha256(self.encoder.descriptor.encoder_id.encode()).hexdigest()[:16],
        )
        self.cache = EmbeddingCache(cache_dir, self.encoder.descriptor)
        self.forest = None
        if config.forest_model_path:
            self.forest = perfpred.forest_load(config.forest_model_path)
        self.rule = perfpred.StoppingRule(tau=config.tau)
        self.pools: dict[str, PoolState] = {}
        self.models: dict[str, ModelState] = {}
        self.train_config = fsl.TrainConfig()
        self._pool_embeddings: dict[str, np.ndarray] = {}
        self._load_all()

    # -- embedding helpers

    def pool_embeddings(self, pool: PoolState) -> np.ndarray:
        if pool.pool_id not in self._pool_embeddings:
            texts = [inst.text for inst in pool.instances]
            self._pool_embeddings[pool.pool_id] = encode_batch_cached(texts, self.encoder, self.cache)
        return self._pool_embeddings[pool.pool_id]

    def desc_embeddings(self, label_set: LabelSet) -> np.ndarray:
        return encode_batch_cached(list(label_set.descriptions), self.encoder, self.cache)

    # -- pool persistence

    def save_pool(self, pool: PoolState):
        path = os.path.join(self.config.data_dir, "pools", f"{pool.pool_id}.jsonl")
        lines = [_canonical({"pool_id": pool.pool_id, "name": pool.name})]
        for inst in pool.instances:
            lines.append(_canonical({
                "id": inst.id, "text": inst.text, "label": inst.gold_label,
                "split": pool.splits.get(inst.id, "train"),
            }))
        _write_atomic(path, b"\n".join(lines) + b"\n")

    def _load_pool(self, path: str) -> PoolState:
        with open(path, "rb") as fh:
            lines = [json.loads(l) for l in fh.read().decode("utf-8").splitlines() if l]
        head = lines[0]
        instances, splits = [], {}
        for doc in lines[1:]:
            instances.append(TextInstance(id=doc["id"], text=doc["text"], gold_label=doc["label"]))
            splits[doc["id"]] = doc.get("split", "train")
        return PoolState(pool_id=head["pool_id"], name=head["name"],
                         instances=instances, splits=splits)

    # -- model persistence (write-ahead: ledger -> model -> snapshots -> commit)

    def _model_dir(self, model_id: str) -> str:
        return os.path.join(self.config.data_dir, "models", model_id)

    def persist_model(self, state: ModelState):
        mdir = self._model_dir(state.model_id)
        os.makedirs(mdir, exist_ok=True)
        meta = {
            "model_id": state.model_id, "name": state.name, "kind": state.kind,
            "labels": [list(e) for e in state.label_set.entries],
            "pool_id": state.pool_id, "t_ids": state.t_ids, "strategy": state.strategy,
        }
        _write_atomic(os.path.join(mdir, "meta.json"), _canonical(meta))
        ledger_blob = b"".join(_canonical(row) + b"\n" for row in state.ledger)
        _write_atomic(os.path.join(mdir, "ledger.jsonl"), ledger_blob)
        _write_atomic(os.path.join(mdir, "model.bin"), fsl.dumps_model(state.model))
        snap_blob = b"".join(_canonical(doc) + b"\n" for doc in state.snapshots)
        _write_atomic(os.path.join(mdir, "snapshots.jsonl"), snap_blob)
        commit = {"n_train": state.n_train, "iterations": len(state.snapshots),
                  "digest": self.state_digest(state)}
        _write_atomic(os.path.join(mdir, "commit.json"), _canonical(commit))

    def state_digest(self, state: ModelState) -> str:
        h = hashlib.sha256()
        h.update(_canonical({
            "model_id": state.model_id, "name": state.name, "kind": state.kind,
            "labels": [list(e) for e in state.label_set.entries],
            "pool_id": state.pool_id, "t_ids": state.t_ids,
        }))
        for row in state.ledger:
            h.update(_canonical(row))
        h.update(fsl.dumps_model(state.model))
        for doc in state.snapshots:
            h.update(_canonical(doc))
        return h.hexdigest()

    def _load_model(self, model_id: str) -> ModelState:
        mdir = self._model_dir(model_id)
        with open(os.path.join(mdir, "meta.json"), "rb") as fh:
            meta = json.loads(fh.read())
        label_set = LabelSet(tuple((n, d) for n, d in meta["labels"]))
        ledger = []
        ledger_path = os.path.join(mdir, "ledger.jsonl")
        if os.path.exists(ledger_path):
            with open(ledger_path, "rb") as fh:
                ledger = [json.loads(l) for l in fh.read().decode().splitlines() if l]
        state = ModelState(
            model_id=model_id, name=meta["name"], kind=meta["kind"], label_set=label_set,
            pool_id=meta["pool_id"], model=None, ledger=ledger, t_ids=meta.get("t_ids", []),
            strategy=meta.get("strategy", "random"),
        )
        commit_path = os.path.join(mdir, "commit.json")
        model_path = os.path.join(mdir, "model.bin")
        snaps_path = os.path.join(mdir, "snapshots.jsonl")
        intact = False
        if os.path.exists(commit_path) and os.path.exists(model_path):
            with open(commit_path, "rb") as fh:
                commit = json.loads(fh.read())
            if commit.get("n_train") == len(ledger):
                state.model = fsl.loads_model(open(model_path, "rb").read())
                if os.path.exists(snaps_path):
                    with open(snaps_path, "rb") as fh:
                        state.snapshots = [json.loads(l) for l in fh.read().decode().splitlines() if l]
                intact = commit.get("digest") == self.state_digest(state)
        if not intact:
            self._replay(state)
            self.persist_model(state)
        return state

    def _replay(self, state: ModelState):
        """Rebuild model and snapshots deterministically from the ledger.

        Previous-round posteriors are passed through the same float32
        round-trip the persisted documents use, so a replayed history is
        bit-identical to the one built incrementally at run time.
        """
        pool = self.pools[state.pool_id]
        desc_emb = self.desc_embeddings(state.label_set)
        emb = self.pool_embeddings(pool)
        index_of = {inst.id: i for i, inst in enumerate(pool.instances)}
        t_emb = emb[[index_of[i] for i in state.t_ids]]
        state.snapshots = []
        batches: dict[int, list[dict]] = {}
        for row in state.ledger:
            batches.setdefault(row["batch"], []).append(row)
        model = fsl.train_embedded(state.kind, state.label_set, self.encoder.descriptor,
                                   desc_emb, np.zeros((0, self.encoder.dim)),
                                   np.zeros(0, dtype=np.int64), self.train_config)
        snap = perfpred.snapshot(model, t_emb, None, np.zeros((0, self.encoder.dim)),
                                 np.zeros(0, dtype=np.int64), 0, 0)
        state.snapshots.append(_snapshot_doc(snap, state.strategy))
        rows_so_far: list[dict] = []
        for batch_no in sorted(batches):
            rows_so_far.extend(batches[batch_no])
            lab_emb = emb[[index_of[r["instance_id"]] for r in rows_so_far]]
            lab_y = np.array([state.label_set.index_of(r["label"]) for r in rows_so_far],
                             dtype=np.int64)
            model = fsl.train_embedded(state.kind, state.label_set, self.encoder.descriptor,
                                       desc_emb, lab_emb, lab_y, self.train_config)
            prev = _snapshot_from_doc(state.snapshots[-1], len(state.label_set))
            snap = perfpred.snapshot(model, t_emb, prev, lab_emb, lab_y, batch_no,
                                     len(rows_so_far), self.train_config, desc_emb,
                                     cv_folds=self.config.cv_folds)
            state.snapshots.append(_snapshot_doc(snap, state.strategy))
        state.model = model

    def _load_all(self):
        pools_dir = os.path.join(self.config.data_dir, "pools")
        for fname in sorted(os.listdir(pools_dir)):
            if fname.endswith(".jsonl"):
                pool = self._load_pool(os.path.join(pools_dir, fname))
                self.pools[pool.pool_id] = pool
        models_dir = os.path.join(self.config.data_dir, "models")
        for model_id in sorted(os.listdir(models_dir)):
            if os.path.isdir(os.path.join(models_dir, model_id)):
                self.models[model_id] = self._load_model(model_id)

    # -- evaluate helpers

    def loaded_snapshots(self, state: ModelState) -> list[perfpred.IterationSnapshot]:
        return [_snapshot_from_doc(doc, len(state.label_set)) for doc in state.snapshots]

    def stop_estimate(self, state: ModelState):
        if self.forest is None or not state.snapshots:
            return None, None
        snaps = self.loaded_snapshots(state)
        row = perfpred.build_feature_row(snaps, state.strategy, len(state.label_set),
                                         self.forest.feature_spec)
        estimate = perfpred.forest_predict(self.forest, row)
        return estimate, bool(estimate >= self.rule.tau)


# --- the app -------------------------------------------------------------------

def create_app(config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig()
    state = ServiceState(config)
    app = FastAPI(title="labelloop", version="0.1.0")
    app.state.service = state

    def error_response(status: int, code: str, message: str, details=None):
        return JSONResponse(status_code=status,
                            content={"code": code, "message": message, "details": details})

    @app.exception_handler(LabelLoopError)
    async def handle_domain_error(request: Request, exc: LabelLoopError):
        if isinstance(exc, ConflictError):
            return error_response(409, "conflict", str(exc))
        if isinstance(exc, BusyError):
            return error_response(503, "training", str(exc))
        if isinstance(exc, StrategyUnavailableError):
            return error_response(409, "strategy_unavailable", str(exc))
        return error_response(400, "validation", str(exc))

    def get_model(model_id: str) -> ModelState:
        model = state.models.get(model_id)
        if model is None:
            raise ValidationError(f"no model {model_id!r}")
        return model

    def require_ready(model: ModelState):
        if model.status != "ready":
            raise BusyError(f"model {model.model_id} is training; retry shortly")

    @app.get("/health")
    def health():
        return {"status": "ok", "encoder": state.encoder.descriptor.encoder_id,
                "forest": state.forest is not None}

    @app.get("/pools")
    def list_pools():
        return {"pools": [
            {"pool_id": p.pool_id, "name": p.name, "size": len(p.instances),
             "test_marked": sum(1 for s in p.splits.values() if s == "test")}
            for p in state.pools.values()
        ]}

    @app.post("/pools", status_code=201)
    def create_pool(req: CreatePoolRequest):
        if not req.instances:
            raise ValidationError("pool must contain at least one instance")
        seen = set()
        instances, splits = [], {}
        for item in req.instances:
            if not item.text:
                raise ValidationError(f"instance {item.id!r} has empty text")
            if item.id in seen:
                raise ConflictError(f"duplicate instance id {item.id!r}")
            if item.split not in ("train", "test"):
                raise ValidationError(f"unknown split {item.split!r}")
            seen.add(item.id)
            instances.append(TextInstance(id=item.id, text=item.text, gold_label=item.label))
            splits[item.id] = item.split
        pool = PoolState(pool_id=uuid.uuid4().hex[:12], name=req.name,
                         instances=instances, splits=splits)
        state.pools[pool.pool_id] = pool
        state.save_pool(pool)
        return {"pool_id": pool.pool_id, "size": len(instances),
                "test_marked": sum(1 for s in splits.values() if s == "test")}

    @app.get("/models")
    def list_models():
        return {"models": [
            {"model_id": m.model_id, "name": m.name, "kind": m.kind,
             "n_train": m.n_train, "status": m.status, "pool_id": m.pool_id}
            for m in state.models.values()
        ]}

    @app.post("/models", status_code=201)
    def create_model(req: CreateModelRequest):
        if req.model_kind not in fsl.MODEL_KINDS:
            raise ValidationError(f"unknown model kind {req.model_kind!r}")
        pool = state.pools.get(req.pool_id)
        if pool is None:
            raise ValidationError(f"no pool {req.pool_id!r}")
        label_set = LabelSet(tuple((e.name, e.description) for e in req.labels))
        valid_ids = {inst.id for inst in pool.trainable}
        for ex in req.seed_examples:
            if ex.instance_id not in valid_ids:
                raise ValidationError(f"seed example {ex.instance_id!r} is not a trainable pool instance")
            label_set.index_of(ex.label)  # raises on unknown label
        model_state = ModelState(
            model_id=uuid.uuid4().hex[:12], name=req.name, kind=req.model_kind,
            label_set=label_set, pool_id=req.pool_id, model=None,
        )
        model_state.t_ids = perfpred.sample_T(
            pool.trainable, config.sample_t_size,
            seed=derive_seed(int(model_state.model_id[:8], 16), "T"),
        )
        now = time.time()
        model_state.ledger = [
            {"batch": 1, "instance_id": ex.instance_id, "label": ex.label, "ts": now}
            for ex in req.seed_examples
        ]
        # the replay path builds both the zero-shot baseline snapshot and,
        # when seed examples exist, the first trained iteration
        state._replay(model_state)
        state.models[model_state.model_id] = model_state
        state.persist_model(model_state)
        return {"model_id": model_state.model_id, "status": model_state.status,
                "n_train": model_state.n_train}

    @app.get("/models/{model_id}")
    def model_summary(model_id: str):
        model = get_model(model_id)
        estimate, stop = state.stop_estimate(model)
        return {
            "model_id": model.model_id, "name": model.name, "kind": model.kind,
            "labels": [{"name": n, "description": d} for n, d in model.label_set.entries],
            "pool_id": model.pool_id, "n_train": model.n_train, "status": model.status,
            "iterations": max(0, len(model.snapshots) - 1),
            "state_digest": state.state_digest(model),
            "stop_estimate": estimate, "tau": config.tau,
        }

    @app.post("/models/{model_id}/request-instances")
    def request_instances(model_id: str, req: RequestInstancesRequest):
        model = get_model(model_id)
        require_ready(model)
        parse_strategy(req.strategy)
        if req.k < 1:
            raise ValidationError("k must be >= 1")
        pool = state.pools[model.pool_id]
        labeled = model.labeled_ids
        candidates = [inst for inst in pool.trainable if inst.id not in labeled]
        if not candidates:
            raise ValidationError("no unlabeled instances remain in the pool")
        emb = state.pool_embeddings(pool)
        index_of = {inst.id: i for i, inst in enumerate(pool.instances)}
        cand_ids = [inst.id for inst in candidates]
        cand_emb = emb[[index_of[i] for i in cand_ids]]
        posteriors = fsl.predict_proba(model.model, cand_emb)
        lab_ids = sorted(labeled)
        lab_emb = emb[[index_of[i] for i in lab_ids]] if lab_ids else None
        view = PoolView(
            ids=cand_ids, posteriors=posteriors, embeddings=cand_emb,
            labeled_ids=lab_ids, labeled_embeddings=lab_emb,
            labeled_posteriors=fsl.predict_proba(model.model, lab_emb) if lab_ids else None,
        )
        k = min(req.k, len(cand_ids))
        sel = SelectionConfig(batch_k=k, seed=derive_seed(
            int(model.model_id[:8], 16), "select", model.n_train, req.strategy))
        picked, _ = select_with_trace(view, req.strategy, sel)
        model.strategy = req.strategy
        by_id = {inst.id: inst for inst in candidates}
        pos_of = {cid: i for i, cid in enumerate(cand_ids)}
        items = []
        for cid in picked:
            item = {"id": cid, "text": by_id[cid].text}
            if req.reveal:
                probs = posteriors[pos_of[cid]]
                item["prediction"] = {
                    "label": model.label_set.names[int(np.argmax(probs))],
                    "probs": [float(p) for p in probs],
                }
            items.append(item)
        return {"strategy": req.strategy, "k": k, "instances": items,
                "labels": list(model.label_set.names)}

    def validate_and_extend(model: ModelState, req: UpdateRequest) -> int:
        """Validate the whole batch, then append it to the ledger; any
        failure leaves the ledger untouched. Returns the batch number."""
        pool = state.pools[model.pool_id]
        trainable = {inst.id for inst in pool.trainable}
        test_marked = {iid for iid, split in pool.splits.items() if split == "test"}
        labeled = model.labeled_ids
        seen_in_batch = set()
        for ann in req.annotations:
            model.label_set.index_of(ann.label)
            if ann.instance_id in test_marked:
                raise ValidationError(
                    f"instance {ann.instance_id!r} is test-marked and cannot be trained on")
            if ann.instance_id not in trainable:
                raise ValidationError(f"instance {ann.instance_id!r} is not in the pool")
            if ann.instance_id in labeled or ann.instance_id in seen_in_batch:
                raise ConflictError(f"instance {ann.instance_id!r} already labeled")
            seen_in_batch.add(ann.instance_id)
        batch_no = (max((r["batch"] for r in model.ledger), default=0)) + 1
        now = time.time()
        model.ledger.extend(
            {"batch": batch_no, "instance_id": a.instance_id, "label": a.label,
             "ts": now, **({"note": req.note} if req.note else {})}
            for a in req.annotations
        )
        return batch_no

    def retrain_and_snapshot(model: ModelState, batch_no: int) -> dict:
        pool = state.pools[model.pool_id]
        emb = state.pool_embeddings(pool)
        index_of = {inst.id: i for i, inst in enumerate(pool.instances)}
        desc_emb = state.desc_embeddings(model.label_set)
        lab_emb = emb[[index_of[r["instance_id"]] for r in model.ledger]]
        lab_y = np.array([model.label_set.index_of(r["label"]) for r in model.ledger],
                         dtype=np.int64)
        model.model = fsl.train_embedded(model.kind, model.label_set, state.encoder.descriptor,
                                         desc_emb, lab_emb, lab_y, state.train_config)
        t_emb = emb[[index_of[i] for i in model.t_ids]]
        prev = _snapshot_from_doc(model.snapshots[-1], len(model.label_set)) \
            if model.snapshots else None
        snap = perfpred.snapshot(model.model, t_emb, prev, lab_emb, lab_y, batch_no,
                                 model.n_train, state.train_config, desc_emb,
                                 cv_folds=config.cv_folds)
        model.snapshots.append(_snapshot_doc(snap, model.strategy))
        state.persist_model(model)
        estimate, stop = state.stop_estimate(model)
        return {
            "n_train": model.n_train, "iteration": batch_no,
            "snapshot": {k: v for k, v in model.snapshots[-1].items()
                         if k not in ("posteriors_T", "t_size")},
            "stop_estimate": estimate, "stop": stop, "status": model.status,
        }

    @app.post("/models/{model_id}/update")
    def update(model_id: str, req: UpdateRequest):
        model = get_model(model_id)
        if not req.annotations:
            raise ValidationError("update requires at least one annotation")
        with model.lock:
            require_ready(model)
            batch_no = validate_and_extend(model, req)
            if req.async_training:
                model.status = "training"

                def work():
                    try:
                        retrain_and_snapshot(model, batch_no)
                    finally:
                        model.status = "ready"

                try:
                    threading.Thread(target=work, daemon=True).start()
                except BaseException:
                    model.status = "ready"
                    raise
                return JSONResponse(status_code=202,
                                    content={"status": "training", "n_train": model.n_train})
            return retrain_and_snapshot(model, batch_no)

    @app.post("/models/{model_id}/run")
    def run(model_id: str, req: RunRequest):
        model = get_model(model_id)
        require_ready(model)
        if len(req.texts) > config.max_run_batch:
            raise ValidationError(
                f"batch of {len(req.texts)} exceeds the limit of {config.max_run_batch}")
        if not req.texts:
            return {"predictions": [], "labels": list(model.label_set.names)}
        emb = encode_batch_cached(req.texts, state.encoder, state.cache)
        probs = fsl.predict_proba(model.model, emb)
        preds = [{"label": model.label_set.names[int(np.argmax(row))],
                  "probs": [float(p) for p in row]} for row in probs]
        return {"predictions": preds, "labels": list(model.label_set.names)}

    @app.get("/models/{model_id}/evaluate")
    def evaluate(model_id: str):
        model = get_model(model_id)
        history = [{k: v for k, v in doc.items() if k not in ("posteriors_T", "t_size")}
                   for doc in model.snapshots]
        estimate, stop = state.stop_estimate(model)
        return {"history": history, "stop_estimate": estimate, "stop": stop,
                "tau": config.tau, "n_train": model.n_train}

    return app


def main_serve(config: ServiceConfig, host: str = "127.0.0.1", port: int = 8080):
    import uvicorn

    uvicorn.run(create_app(config), host=host, port=port, log_level="warning")
