"""Training and prediction for the five systems under comparison.

``evidential`` trains an exponential-output head on the closed-form
Dirichlet risk; the baselines are a weight-decayed softmax classifier
(``l2``), Monte Carlo dropout (``mcdp``), mean-field Gaussian weight
posteriors (``bbb``), and an ensemble of independently seeded ``l2``
models.  All of them emit PredictionRecords and share one training
engine, one checkpoint format, and one prediction-log format.
"""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ContractError, TrainingError
from .evidential import batch_total_loss, confidence
from .metrics import accuracy_f1
from .network import (
    AdamWState,
    FeedForwardNet,
    LayerSpec,
    ScheduleConfig,
    adamw_step,
    load_checkpoint,
    noam_lr,
    save_checkpoint,
    softplus,
)
from .numeric import SeededStream
from .tables import read_table, write_table

__all__ = [
    "METHODS",
    "MethodConfig",
    "PredictionRecord",
    "TrainedModel",
    "train_evidential",
    "train_l2",
    "train_mcdp",
    "train_bbb",
    "train_ensemble",
    "train_method",
    "predict",
    "predict_mcdp",
    "predict_bbb",
    "predict_ensemble",
    "predict_dataset",
    "save_model",
    "load_model",
    "write_prediction_log",
    "read_prediction_log",
]

METHODS = ("evidential", "l2", "mcdp", "bbb", "ensemble")

# Fixed odd offset between ensemble-member seeds so their Philox keys are
# uncorrelated.
MEMBER_SEED_STRIDE = 0x9E3779B9
_U64 = 1 << 64


@dataclass
class MethodConfig:
    method: str
    seed: int = 0
    lam: float = 0.5
    kl_form: str = "mean"
    dropout_rate: float = 0.3
    test_samples: int = 50
    ensemble_size: int = 5
    prior_scale: float = 1.0
    kl_weight_mode: str = "uniform"
    weight_decay: float | None = None
    hidden_dims: tuple[int, ...] = (128, 128)
    epochs: int = 30
    batch_size: int = 32
    warmup_steps: int = 400
    peak_lr: float = 4.29e-5

    def __post_init__(self):
        if self.method not in METHODS:
            raise ContractError(f"unknown method {self.method!r}; expected one of {METHODS}")
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        if self.test_samples < 1:
            raise ContractError("test_samples must be >= 1")
        if self.ensemble_size < 1:
            raise ContractError("ensemble_size must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ContractError("dropout_rate must lie in [0, 1)")
        if self.lam < 0.0:
            raise ContractError("lambda must be non-negative")
        if not self.prior_scale > 0.0:
            raise ContractError("prior_scale must be positive")
        if self.kl_weight_mode not in ("uniform", "geometric"):
            raise ContractError("kl_weight_mode must be 'uniform' or 'geometric'")
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractError("epochs and batch_size must be >= 1")
        if self.weight_decay is not None and self.weight_decay < 0.0:
            raise ContractError("weight_decay must be non-negative")

    def resolved_weight_decay(self) -> float:
        """Decay defaults to 0.01 for the weight-decayed baselines and 0
        elsewhere; an explicit value always wins."""
        if self.weight_decay is not None:
            return self.weight_decay
        return 0.01 if self.method in ("l2", "ensemble") else 0.0

    def schedule(self) -> ScheduleConfig:
        return ScheduleConfig(warmup_steps=self.warmup_steps, peak_lr=self.peak_lr)


@dataclass(frozen=True)
class PredictionRecord:
    id: str
    pi_hat: tuple[float, ...]
    predicted_class: int
    confidence: float
    true_class: int
    correct: bool

    @classmethod
    def from_distribution(cls, id: str, pi_hat, true_class: int) -> "PredictionRecord":
        pi = np.asarray(pi_hat, dtype=float)
        if pi.ndim != 1 or pi.size < 2:
            raise ContractError("pi_hat must be a vector with K >= 2 entries")
        if np.any(pi < 0.0) or abs(float(pi.sum()) - 1.0) > 1e-9:
            raise ContractError("pi_hat must be a probability simplex")
        if not 0 <= true_class < pi.size:
            raise ContractError("true_class outside [0, K)")
        k, conf = confidence(pi)
        return cls(
            id=id,
            pi_hat=tuple(float(v) for v in pi),
            predicted_class=k,
            confidence=conf,
            true_class=int(true_class),
            correct=k == int(true_class),
        )


@dataclass
class TrainedModel:
    method: str
    config: MethodConfig
    members: list[FeedForwardNet]
    num_classes: int
    history: list[dict] = field(default_factory=list)

    @property
    def net(self) -> FeedForwardNet:
        return self.members[0]


# -- internals ---------------------------------------------------------------


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _cross_entropy(logits: np.ndarray, classes: np.ndarray) -> tuple[float, np.ndarray]:
    """Batch-mean softmax cross-entropy and its gradient in the logits."""
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    rows = np.arange(n)
    loss = float(-log_p[rows, classes].mean())
    grad = np.exp(log_p)
    grad[rows, classes] -= 1.0
    return loss, grad / n


def _pool_dataset(examples) -> tuple[np.ndarray, np.ndarray]:
    feats = np.stack([ex.pooled() for ex in examples])
    labels = np.array([ex.label for ex in examples], dtype=int)
    return feats, labels


def _check_datasets(train, val):
    if not train or not val:
        raise ContractError("training and validation sets must be nonempty")
    dim = train[0].dim
    for ex in train + val:
        if ex.dim != dim:
            raise ContractError("inconsistent feature dimension across the dataset")
    k = max(max(ex.label for ex in train), max(ex.label for ex in val)) + 1
    if k < 2:
        raise ContractError("need at least two classes")
    return dim, k


def _build_net(cfg: MethodConfig, dim: int, k: int, stream: SeededStream) -> FeedForwardNet:
    dropout = cfg.dropout_rate if cfg.method == "mcdp" else 0.0
    bayesian = cfg.method == "bbb"
    specs = []
    prev = dim
    for h in cfg.hidden_dims:
        specs.append(LayerSpec(prev, h, "relu", dropout_rate=dropout, bayesian=bayesian))
        prev = h
    head = "exponential" if cfg.method == "evidential" else "identity"
    specs.append(LayerSpec(prev, k, head, bayesian=bayesian))
    return FeedForwardNet.initialise(specs, stream)


def _gaussian_kl_terms(net: FeedForwardNet, prior_scale: float):
    """Total KL(posterior || N(0, prior_scale^2)) over all Bayesian
    parameters plus its analytic gradients; None where a layer has none."""
    total = 0.0
    grads = net.zero_grads()
    s2 = prior_scale * prior_scale
    for i, spec in enumerate(net.specs):
        if not spec.bayesian:
            continue
        layer = net.params[i]
        for prefix in ("w", "b"):
            mu = layer[f"{prefix}_mu"]
            rho = layer[f"{prefix}_rho"]
            sigma = softplus(rho)
            kl = np.log(prior_scale / sigma) + (sigma**2 + mu**2) / (2.0 * s2) - 0.5
            total += float(kl.sum())
            sig_grad = 1.0 / (1.0 + np.exp(-rho))
            grads[i][f"{prefix}_mu"] = mu / s2
            grads[i][f"{prefix}_rho"] = (-1.0 / sigma + sigma / s2) * sig_grad
    if not np.isfinite(total):
        raise TrainingError("non-finite KL term")
    return total, grads


def _kl_batch_weights(mode: str, num_batches: int) -> np.ndarray:
    if mode == "uniform":
        return np.full(num_batches, 1.0 / num_batches)
    # geometric: batch i of M gets 2^(M-i) / (2^M - 1), heavy early
    i = np.arange(1, num_batches + 1, dtype=float)
    return 2.0**-i / (1.0 - 2.0**-num_batches)


def _validation_pass(net, cfg, x_val, y_val, k):
    """Deterministic validation predictions (posterior means for bbb);
    returns (f1, mean loss, records)."""
    out, _ = net.forward(x_val, "eval")
    if cfg.method == "evidential":
        breakdown, _ = batch_total_loss(out, y_val, cfg.lam, cfg.kl_form)
        loss = breakdown.total
        probs = out / out.sum(axis=1, keepdims=True)
    else:
        loss, _ = _cross_entropy(out, y_val)
        probs = _softmax(out)
    records = [
        PredictionRecord.from_distribution(f"val-{i}", probs[i], int(y_val[i]))
        for i in range(len(y_val))
    ]
    _, f1 = accuracy_f1(records)
    return f1, loss, records


def _train_single(train, val, cfg: MethodConfig, seed: int) -> tuple[FeedForwardNet, list[dict]]:
    """Shared engine: mini-batch AdamW under the Noam schedule, keeping the
    checkpoint with the best validation F1 (ties broken by lower loss)."""
    dim, k = _check_datasets(train, val)
    x_train, y_train = _pool_dataset(train)
    x_val, y_val = _pool_dataset(val)

    init_stream = SeededStream(seed, 1)
    shuffle_stream = SeededStream(seed, 2)
    noise_stream = SeededStream(seed, 3)
    net = _build_net(cfg, dim, k, init_stream)
    state = AdamWState(net, weight_decay=cfg.resolved_weight_decay())
    schedule = cfg.schedule()

    n = len(train)
    batches = [
        (ofs, min(ofs + cfg.batch_size, n)) for ofs in range(0, n, cfg.batch_size)
    ]
    kl_weights = _kl_batch_weights(cfg.kl_weight_mode, len(batches))

    best = None  # (f1, -loss, params snapshot)
    history = []
    step = 0
    train_mode_needs_stream = net.is_stochastic
    for epoch in range(cfg.epochs):
        perm = shuffle_stream.gen.permutation(n)
        epoch_loss = 0.0
        for b, (lo, hi) in enumerate(batches):
            idx = perm[lo:hi]
            xb, yb = x_train[idx], y_train[idx]
            step += 1
            lr = noam_lr(step, schedule)
            stream = noise_stream if train_mode_needs_stream else None
            out, tape = net.forward(xb, "train", stream)
            if cfg.method == "evidential":
                breakdown, dout = batch_total_loss(out, yb, cfg.lam, cfg.kl_form)
                loss = breakdown.total
            else:
                loss, dout = _cross_entropy(out, yb)
            grads = net.backward(tape, dout)
            if cfg.method == "bbb":
                kl, kl_grads = _gaussian_kl_terms(net, cfg.prior_scale)
                klw = float(kl_weights[b])
                loss += klw * kl
                for gl, kl_gl in zip(grads, kl_grads):
                    for key in gl:
                        gl[key] += klw * kl_gl[key]
            if not np.isfinite(loss):
                raise TrainingError(f"divergent training loss at step {step}")
            epoch_loss += loss * len(idx)
            adamw_step(net, grads, state, lr)

        f1, val_loss, _ = _validation_pass(net, cfg, x_val, y_val, k)
        history.append(
            {
                "epoch": epoch,
                "train_loss": epoch_loss / n,
                "val_f1": f1,
                "val_loss": val_loss,
            }
        )
        if best is None or (f1, -val_loss) > (best[0], -best[1]):
            best = (f1, val_loss, copy.deepcopy(net.params))

    restored = FeedForwardNet(net.specs, best[2])
    return restored, history


# -- training entry points -----------------------------------------------


def _single_method_model(train, val, cfg: MethodConfig) -> TrainedModel:
    net, history = _train_single(train, val, cfg, cfg.seed)
    return TrainedModel(
        method=cfg.method,
        config=cfg,
        members=[net],
        num_classes=net.output_dim,
        history=history,
    )


def train_evidential(train, val, cfg: MethodConfig) -> TrainedModel:
    if cfg.method != "evidential":
        raise ContractError("config method must be 'evidential'")
    return _single_method_model(train, val, cfg)


def train_l2(train, val, cfg: MethodConfig) -> TrainedModel:
    if cfg.method != "l2":
        raise ContractError("config method must be 'l2'")
    return _single_method_model(train, val, cfg)


def train_mcdp(train, val, cfg: MethodConfig) -> TrainedModel:
    if cfg.method != "mcdp":
        raise ContractError("config method must be 'mcdp'")
    return _single_method_model(train, val, cfg)


def train_bbb(train, val, cfg: MethodConfig) -> TrainedModel:
    if cfg.method != "bbb":
        raise ContractError("config method must be 'bbb'")
    return _single_method_model(train, val, cfg)


def train_ensemble(train, val, cfg: MethodConfig) -> TrainedModel:
    """Independently seeded members, each trained like the l2 baseline."""
    if cfg.method != "ensemble":
        raise ContractError("config method must be 'ensemble'")
    members, histories = [], []
    for i in range(cfg.ensemble_size):
        member_seed = (cfg.seed + i * MEMBER_SEED_STRIDE) % _U64
        net, history = _train_single(train, val, cfg, member_seed)
        members.append(net)
        histories.append(history)
    return TrainedModel(
        method="ensemble",
        config=cfg,
        members=members,
        num_classes=members[0].output_dim,
        history=[h for hist in histories for h in hist],
    )


_TRAINERS = {
    "evidential": train_evidential,
    "l2": train_l2,
    "mcdp": train_mcdp,
    "bbb": train_bbb,
    "ensemble": train_ensemble,
}


def train_method(train, val, cfg: MethodConfig) -> TrainedModel:
    return _TRAINERS[cfg.method](train, val, cfg)


# -- prediction ---------------------------------------------------------------


def _example_stream(base: SeededStream, example_id: str) -> SeededStream:
    """Private substream per example id, so per-example sampling is
    order-independent and parallel-safe."""
    digest = hashlib.blake2b(example_id.encode("utf-8"), digest_size=8).digest()
    return base.split(int.from_bytes(digest, "big"))


def _check_example(model: TrainedModel, example):
    if example.dim != model.net.input_dim:
        raise ContractError(
            f"feature dimension {example.dim} does not match model input "
            f"{model.net.input_dim}"
        )


def _order_invariant_mean(rows: np.ndarray) -> np.ndarray:
    # summing each component in sorted order makes the result independent
    # of member/sample ordering down to the last bit
    return np.sort(rows, axis=0).sum(axis=0) / rows.shape[0]


def predict_mcdp(model: TrainedModel, example, cfg: MethodConfig,
                 rng: SeededStream) -> PredictionRecord:
    """Average of softmax outputs over stochastic dropout passes."""
    if cfg.test_samples < 1:
        raise ContractError("test_samples must be >= 1")
    _check_example(model, example)
    stream = _example_stream(rng, example.id)
    x = np.tile(example.pooled(), (cfg.test_samples, 1))
    out, _ = model.net.forward(x, "train", stream)
    pi = _order_invariant_mean(_softmax(out))
    return PredictionRecord.from_distribution(example.id, pi, example.label)


def predict_bbb(model: TrainedModel, example, cfg: MethodConfig,
                rng: SeededStream) -> PredictionRecord:
    """Average of softmax outputs over posterior weight samples."""
    if cfg.test_samples < 1:
        raise ContractError("test_samples must be >= 1")
    _check_example(model, example)
    stream = _example_stream(rng, example.id)
    x = example.pooled()
    sampled = np.stack(
        [model.net.forward(x, "eval", stream)[0] for _ in range(cfg.test_samples)]
    )
    pi = _order_invariant_mean(_softmax(sampled))
    return PredictionRecord.from_distribution(example.id, pi, example.label)


def predict_ensemble(model: TrainedModel, example) -> PredictionRecord:
    if not model.members:
        raise ContractError("ensemble has no members")
    _check_example(model, example)
    x = example.pooled()
    outs = np.stack([net.forward(x, "eval")[0] for net in model.members])
    pi = _order_invariant_mean(_softmax(outs))
    return PredictionRecord.from_distribution(example.id, pi, example.label)


def predict(model: TrainedModel, example, rng: SeededStream | None = None) -> PredictionRecord:
    """Method dispatch; fills every PredictionRecord field."""
    _check_example(model, example)
    method = model.method
    if method == "evidential":
        alpha, _ = model.net.forward(example.pooled(), "eval")
        pi = alpha / alpha.sum()
        return PredictionRecord.from_distribution(example.id, pi, example.label)
    if method == "l2":
        logits, _ = model.net.forward(example.pooled(), "eval")
        return PredictionRecord.from_distribution(
            example.id, _softmax(logits), example.label
        )
    if method == "mcdp":
        if rng is None:
            raise ContractError("mcdp prediction requires a stream")
        return predict_mcdp(model, example, model.config, rng)
    if method == "bbb":
        if rng is None:
            raise ContractError("bbb prediction requires a stream")
        return predict_bbb(model, example, model.config, rng)
    return predict_ensemble(model, example)


def predict_dataset(model: TrainedModel, examples,
                    rng: SeededStream | None = None) -> list[PredictionRecord]:
    return [predict(model, ex, rng) for ex in examples]


# -- checkpoint and log files -------------------------------------------------


def save_model(path, model: TrainedModel, provenance: str | None = None) -> None:
    cfg = asdict(model.config)
    cfg["hidden_dims"] = list(model.config.hidden_dims)
    payload = {
        "method": model.method,
        "config": cfg,
        "num_classes": model.num_classes,
        "members": [net.to_dict() for net in model.members],
    }
    # JSON has no comment syntax, so provenance rides as a payload field
    if provenance is not None:
        payload["provenance"] = provenance
    save_checkpoint(path, payload)


def load_model(path) -> TrainedModel:
    doc = load_checkpoint(path)
    cfg_dict = dict(doc["config"])
    cfg_dict["hidden_dims"] = tuple(cfg_dict["hidden_dims"])
    cfg = MethodConfig(**cfg_dict)
    members = [FeedForwardNet.from_dict(d) for d in doc["members"]]
    return TrainedModel(
        method=doc["method"],
        config=cfg,
        members=members,
        num_classes=int(doc["num_classes"]),
    )


def prediction_log_columns(num_classes: int) -> list[str]:
    return (
        ["id", "method", "seed"]
        + [f"pi_{k}" for k in range(num_classes)]
        + ["predicted_class", "confidence", "true_class"]
    )


def write_prediction_log(path, records, method: str, seed: int, comments=()) -> None:
    """One line per test example; the contract between training and the
    metrics/calibration stages."""
    if not records:
        raise ContractError("refusing to write an empty prediction log")
    k = len(records[0].pi_hat)
    columns = prediction_log_columns(k)
    rows = []
    for r in records:
        if len(r.pi_hat) != k:
            raise ContractError("records mix class counts")
        row = {"id": r.id, "method": method, "seed": seed}
        for j, v in enumerate(r.pi_hat):
            row[f"pi_{j}"] = float(v)
        row["predicted_class"] = r.predicted_class
        row["confidence"] = float(r.confidence)
        row["true_class"] = r.true_class
        rows.append(row)
    write_table(path, columns, rows, comments)


def read_prediction_log(path) -> list[tuple[str, int, PredictionRecord]]:
    """Returns (method, seed, record) triples with stored values taken
    verbatim (confidence is not recomputed)."""
    _, columns, rows = read_table(path)
    pi_cols = [c for c in columns if c.startswith("pi_")]
    out = []
    for row in rows:
        pred = int(row["predicted_class"])
        true = int(row["true_class"])
        record = PredictionRecord(
            id=row["id"],
            pi_hat=tuple(float(row[c]) for c in pi_cols),
            predicted_class=pred,
            confidence=float(row["confidence"]),
            true_class=true,
            correct=pred == true,
        )
        out.append((row["method"], int(row["seed"]), record))
    return out
