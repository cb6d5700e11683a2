"""Composite objective, optimization loop, metrics, search, and ablations.

The objective is

    L = L_ce + alpha * L_div + beta * L_cls + gamma * L_sep + delta * L_spa

with the diversity/clustering/separation terms computed per granularity and
summed. L_div >= 0, L_cls >= 0, L_spa >= 0, and L_sep <= 0 by construction.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import logging
import math
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import torch
from scipy import stats
from torch import Tensor

from .corpus import LabeledEmail, SplitCorpus, balance_and_split, save_split_manifest
from .encoders import EncoderConfig
from .parsing import DependencyGraph
from .protonet import (
    ClassifierHead,
    ModelConfig,
    ModelOutput,
    MultiViewPrototypeModel,
    PreparedEmail,
    ProjectionPool,
    PrototypeBank,
    ProtoError,
    UnitProvenance,
    project_prototypes,
)

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class Hyperparams:
    batch_size: int = 32
    learning_rate: float = 1e-3  # desk-scale default for tiny encoders
    positive_class_weight: float = 1.0
    j: int = 10
    k: int = 10
    m: int = 10
    theta: float = 0.3
    alpha: float = 0.01
    beta: float = 0.05
    gamma: float = 0.01
    delta: float = 0.005
    lambda1: float = 0.3
    lambda2: float = 0.5
    weight_decay: float = 0.1
    epochs: int = 30
    seed: int = 0
    projection_period: int = 5
    early_stopping_patience: int = 5
    sep_margin: float | None = None  # optional clamp max(L_sep, -margin); off by default

    def __post_init__(self) -> None:
        for name in ("alpha", "beta", "gamma", "delta", "lambda1", "lambda2",
                     "positive_class_weight", "weight_decay", "learning_rate"):
            if getattr(self, name) < 0:
                raise TrainingError(f"{name} must be nonnegative")
        if not -1.0 <= self.theta <= 1.0:
            raise TrainingError("theta must lie in [-1, 1]")
        for name in ("j", "k", "m"):
            v = getattr(self, name)
            if v <= 0 or v % 2:
                raise TrainingError(f"{name} must be a positive even integer, got {v}")
        if self.batch_size <= 0 or self.epochs < 0:
            raise TrainingError("batch_size must be positive and epochs nonnegative")


# ---------------------------------------------------------------------------
# Loss terms
# ---------------------------------------------------------------------------

def loss_ce(probs: Tensor, labels: Tensor, positive_class_weight: float = 1.0) -> Tensor:
    """Weighted cross entropy: mean over the batch of w_y * -log p(y).

    The weight applies to the positive class; the negative class has
    weight 1. Probabilities are clamped away from zero before the log.
    """
    p_true = probs.gather(1, labels.view(-1, 1)).squeeze(1).clamp(min=1e-12)
    weights = torch.where(
        labels == 1,
        torch.full_like(p_true, positive_class_weight),
        torch.ones_like(p_true),
    )
    return (weights * -torch.log(p_true)).mean()


def loss_div(banks: Mapping[str, PrototypeBank], theta: float) -> Tensor:
    """Diversity penalty over ordered same-class prototype pairs.

    Sum over granularities, classes, and ordered pairs q != r of
    max(0, cos(p_q, p_r) - theta). Zero-norm prototypes contribute cosine 0
    (with a diagnostic) rather than failing.
    """
    total: Tensor | None = None
    for bank in banks.values():
        v = bank.vectors
        norms = v.norm(dim=1)
        if bool((norms < 1e-12).any()):
            log.warning("%s bank: zero-norm prototype, cosine treated as 0", bank.granularity)
        vn = v / norms.clamp(min=1e-12).unsqueeze(1)
        cos = vn @ vn.T
        contrib = torch.zeros((), dtype=v.dtype, device=v.device)
        for cls in (0, 1):
            idx = torch.nonzero(bank.class_of == cls, as_tuple=False).flatten()
            sub = cos[idx][:, idx]
            off = ~torch.eye(len(idx), dtype=torch.bool, device=v.device)
            contrib = contrib + torch.relu(sub[off] - theta).sum()
        total = contrib if total is None else total + contrib
    if total is None:
        raise TrainingError("loss_div needs at least one prototype bank")
    return total


def _squared_distances(units: Tensor, prototypes: Tensor) -> Tensor:
    return (units.unsqueeze(1) - prototypes.unsqueeze(0)).pow(2).sum(-1)


def loss_cls(units: Tensor, labels: Tensor, bank: PrototypeBank) -> Tensor:
    """Mean over units of the squared distance to the nearest own-class prototype."""
    if units.shape[0] == 0:
        return torch.zeros((), dtype=units.dtype)
    d2 = _squared_distances(units, bank.vectors)
    same = labels.unsqueeze(1) == bank.class_of.unsqueeze(0)
    if bool((~same.any(dim=1)).any()):
        raise TrainingError("a unit has no same-class prototypes")
    return d2.masked_fill(~same, float("inf")).min(dim=1).values.mean()


def loss_sep(units: Tensor, labels: Tensor, bank: PrototypeBank) -> Tensor:
    """Negative mean over units of the squared distance to the nearest
    other-class prototype (lower = better separated)."""
    if units.shape[0] == 0:
        return torch.zeros((), dtype=units.dtype)
    d2 = _squared_distances(units, bank.vectors)
    other = labels.unsqueeze(1) != bank.class_of.unsqueeze(0)
    if bool((~other.any(dim=1)).any()):
        raise TrainingError("a unit has no other-class prototypes")
    return -d2.masked_fill(~other, float("inf")).min(dim=1).values.mean()


def loss_spa(head: ClassifierHead) -> Tensor:
    """L1 norm of the output-layer weights (bias excluded)."""
    return head.linear.weight.abs().sum()


def total_loss(
    output: ModelOutput,
    labels: Tensor,
    model: MultiViewPrototypeModel,
    hp: Hyperparams,
) -> tuple[Tensor, dict[str, float]]:
    """Composite objective; returns (scalar loss, per-term floats)."""
    ce = loss_ce(output.probs, labels, hp.positive_class_weight)
    total = ce
    parts = {"ce": float(ce.detach())}
    if model.banks:
        div = loss_div(model.banks, hp.theta)
        cls_terms, sep_terms = [], []
        for g, bank in model.banks.items():
            units = output.unit_embeddings[g]
            unit_labels = labels[output.unit_owner[g]]
            cls_terms.append(loss_cls(units, unit_labels, bank))
            sep_terms.append(loss_sep(units, unit_labels, bank))
        cls_total = torch.stack(cls_terms).sum()
        sep_total = torch.stack(sep_terms).sum()
        if hp.sep_margin is not None:
            sep_total = torch.clamp(sep_total, min=-hp.sep_margin)
        spa = loss_spa(model.head)
        total = ce + hp.alpha * div + hp.beta * cls_total + hp.gamma * sep_total + hp.delta * spa
        parts.update(
            div=float(div.detach()), cls=float(cls_total.detach()),
            sep=float(sep_total.detach()), spa=float(spa.detach()),
        )
    parts["total"] = float(total.detach())
    return total, parts


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

@dataclass
class Metrics:
    macro_f1: float
    weighted_f1: float
    accuracy: float
    per_class: dict[int, dict[str, float]]
    confusion: list[list[int]]  # confusion[true][pred]

    @classmethod
    def from_predictions(cls, y_true: Sequence[int], y_pred: Sequence[int]) -> "Metrics":
        if len(y_true) != len(y_pred) or not y_true:
            raise TrainingError("predictions and labels must be equal-length and non-empty")
        conf = [[0, 0], [0, 0]]
        for t, p in zip(y_true, y_pred):
            conf[t][p] += 1
        per_class: dict[int, dict[str, float]] = {}
        for c in (0, 1):
            tp = conf[c][c]
            fp = conf[1 - c][c]
            fn = conf[c][1 - c]
            precision = tp / (tp + fp) if tp + fp else 0.0
            recall = tp / (tp + fn) if tp + fn else 0.0
            f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
            per_class[c] = {
                "precision": precision,
                "recall": recall,
                "f1": f1,
                "support": float(conf[c][0] + conf[c][1]),
            }
        total = len(y_true)
        macro = (per_class[0]["f1"] + per_class[1]["f1"]) / 2
        weighted = sum(per_class[c]["f1"] * per_class[c]["support"] for c in (0, 1)) / total
        accuracy = (conf[0][0] + conf[1][1]) / total
        return cls(
            macro_f1=macro, weighted_f1=weighted, accuracy=accuracy,
            per_class=per_class, confusion=conf,
        )

    def to_dict(self) -> dict:
        return {
            "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1,
            "accuracy": self.accuracy,
            "per_class": {str(c): v for c, v in self.per_class.items()},
            "confusion": self.confusion,
        }


def evaluate(
    model: MultiViewPrototypeModel,
    emails: Sequence[LabeledEmail],
    parses: Mapping[tuple[str, int], DependencyGraph],
    batch_size: int = 64,
) -> Metrics:
    items = [model.prepare_email(le, parses) for le in emails]
    return evaluate_prepared(model, items, batch_size)


def evaluate_prepared(
    model: MultiViewPrototypeModel, items: Sequence[PreparedEmail], batch_size: int = 64
) -> Metrics:
    model.eval()
    y_true, y_pred = [], []
    with torch.no_grad():
        for start in range(0, len(items), batch_size):
            chunk = items[start : start + batch_size]
            out = model.forward_batch(model.collate(chunk))
            preds = out.probs.argmax(dim=1).tolist()
            y_pred.extend(int(p) for p in preds)
            y_true.extend(it.label for it in chunk)
    return Metrics.from_predictions(y_true, y_pred)


@dataclass
class TTestResult:
    t: float
    p: float


def paired_t_test(scores_a: Sequence[float], scores_b: Sequence[float]) -> TTestResult:
    """Standard paired t statistic with n-1 degrees of freedom, two-sided p.

    Zero-variance differences degenerate: identical samples give (0, 1);
    a constant nonzero difference gives an infinite t with p -> 0.
    """
    if len(scores_a) != len(scores_b):
        raise TrainingError("paired samples must have equal length")
    n = len(scores_a)
    if n < 2:
        raise TrainingError("paired t-test needs at least 2 pairs")
    diffs = np.asarray(scores_a, dtype=float) - np.asarray(scores_b, dtype=float)
    mean = float(diffs.mean())
    sd = float(diffs.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(t=0.0, p=1.0)
        log.warning("paired_t_test: zero-variance nonzero differences, t is infinite")
        return TTestResult(t=math.copysign(math.inf, mean), p=0.0)
    t = mean / (sd / math.sqrt(n))
    p = 2.0 * float(stats.t.sf(abs(t), df=n - 1))
    return TTestResult(t=t, p=p)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class RunHistory:
    epochs: list[dict] = field(default_factory=list)
    projections: list[int] = field(default_factory=list)
    wall_clock_seconds: float = 0.0
    aborted: bool = False

    def append_epoch(self, record: dict) -> None:
        if self.epochs and record["epoch"] <= self.epochs[-1]["epoch"]:
            raise TrainingError("epoch indices must be strictly increasing")
        self.epochs.append(record)

    def best_val_weighted_f1(self) -> float:
        if not self.epochs:
            return 0.0
        return max(e["val"]["weighted_f1"] for e in self.epochs)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.epochs)


def build_model(hp: Hyperparams, encoder: EncoderConfig | None = None, **overrides) -> MultiViewPrototypeModel:
    """Construct a model whose prototype counts and fusion weights follow hp."""
    torch.manual_seed(hp.seed)
    config = ModelConfig(
        encoder=encoder or EncoderConfig(),
        j=hp.j, k=hp.k, m=hp.m,
        lambda1=hp.lambda1, lambda2=hp.lambda2,
        **overrides,
    )
    return MultiViewPrototypeModel(config)


def _document_surface(email) -> str:
    return f"{email.subject}\n{email.body}" if email.subject else email.body


def build_projection_pools(
    model: MultiViewPrototypeModel,
    items: Sequence[PreparedEmail],
    batch_size: int = 64,
) -> dict[str, ProjectionPool]:
    """Encode every training unit once and bundle embeddings with provenance."""
    model.eval()
    chunks: list[ModelOutput] = []
    with torch.no_grad():
        for start in range(0, len(items), batch_size):
            chunks.append(model.forward_batch(model.collate(items[start : start + batch_size])))
    pools: dict[str, ProjectionPool] = {}
    for g in model.banks:
        embs = torch.cat([c.unit_embeddings[g] for c in chunks], dim=0).detach().clone()
        labels, provenance = [], []
        for start in range(0, len(items), batch_size):
            for it in items[start : start + batch_size]:
                if g == "document":
                    labels.append(it.label)
                    provenance.append(UnitProvenance(it.email.id, 0, _document_surface(it.email)))
                elif g == "sentence":
                    for si, s in enumerate(it.sentences):
                        labels.append(it.label)
                        provenance.append(UnitProvenance(it.email.id, si, s))
                else:
                    for pi, sg in enumerate(it.subgraphs):
                        labels.append(it.label)
                        provenance.append(UnitProvenance(it.email.id, pi, sg.surface_text))
        pools[g] = ProjectionPool(
            embeddings=embs,
            labels=torch.tensor(labels, dtype=torch.long),
            provenance=provenance,
        )
    return pools


def initialize_prototypes(model: MultiViewPrototypeModel, pools: Mapping[str, ProjectionPool], seed: int) -> None:
    """Warm-start each prototype from a random same-class training unit."""
    rng = random.Random(seed)
    with torch.no_grad():
        for g, bank in model.banks.items():
            pool = pools[g]
            for cls in (0, 1):
                unit_idx = [i for i in range(len(pool.labels)) if int(pool.labels[i]) == cls]
                proto_idx = [i for i in range(bank.count) if int(bank.class_of[i]) == cls]
                if not unit_idx:
                    raise ProtoError(f"{g}: no class-{cls} units to initialize from")
                if len(unit_idx) >= len(proto_idx):
                    chosen = rng.sample(unit_idx, len(proto_idx))
                else:
                    chosen = [rng.choice(unit_idx) for _ in proto_idx]
                for pi, ui in zip(proto_idx, chosen):
                    bank.vectors.data[pi] = pool.embeddings[ui]


def train(
    model: MultiViewPrototypeModel,
    split: SplitCorpus,
    hp: Hyperparams,
    parses: Mapping[tuple[str, int], DependencyGraph],
) -> tuple[MultiViewPrototypeModel, RunHistory]:
    """AdamW optimization with periodic and final prototype projection.

    Prototypes are projected in place every ``projection_period`` epochs and
    on the last epoch; the retained best-validation-weighted-F1 checkpoint is
    always one of those projected states, so the banks of the returned model
    coincide with real training units and carry provenance. Early stopping
    uses the configured patience against the best projected epoch, and a
    non-finite loss aborts onto the last good state.
    """
    t0 = time.monotonic()
    rng = random.Random(hp.seed)
    torch.manual_seed(hp.seed)
    history = RunHistory()
    train_items = [model.prepare_email(le, parses) for le in split.train]
    val_items = [model.prepare_email(le, parses) for le in split.val]
    if model.banks:
        initialize_prototypes(model, build_projection_pools(model, train_items), hp.seed)
    if hp.epochs == 0:
        history.wall_clock_seconds = time.monotonic() - t0
        return model, history
    optimizer = torch.optim.AdamW(model.parameters(), lr=hp.learning_rate, weight_decay=hp.weight_decay)
    best_state: dict | None = None
    best_f1 = -1.0
    best_epoch = 0
    order = list(range(len(train_items)))
    for epoch in range(1, hp.epochs + 1):
        model.train()
        rng.shuffle(order)
        sums: dict[str, float] = {}
        n_batches = 0
        aborted = False
        for start in range(0, len(order), hp.batch_size):
            batch = [train_items[i] for i in order[start : start + hp.batch_size]]
            out = model.forward_batch(model.collate(batch))
            loss, parts = total_loss(out, torch.tensor([b.label for b in batch]), model, hp)
            if not torch.isfinite(loss):
                log.error("non-finite loss at epoch %d; aborting onto last good checkpoint", epoch)
                aborted = True
                break
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + v
            n_batches += 1
        if aborted:
            history.aborted = True
            break
        projected_now = model.banks and (epoch % hp.projection_period == 0 or epoch == hp.epochs)
        if projected_now:
            project_prototypes(dict(model.banks), build_projection_pools(model, train_items))
            history.projections.append(epoch)
        val_metrics = evaluate_prepared(model, val_items)
        record = {
            "epoch": epoch,
            "loss": {k: v / max(n_batches, 1) for k, v in sums.items()},
            "val": val_metrics.to_dict(),
            "projected": bool(projected_now),
        }
        history.append_epoch(record)
        # Only projected states may become the retained checkpoint: the final
        # served model must have data-identical prototypes, and restoring an
        # unprojected best and projecting it afterwards can move the banks far
        # from what the head was validated on.
        snapshot_eligible = projected_now or not model.banks
        if snapshot_eligible and val_metrics.weighted_f1 > best_f1 + 1e-12:
            best_f1 = val_metrics.weighted_f1
            best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
        if best_state is not None and epoch - best_epoch >= hp.early_stopping_patience:
            log.info("early stopping at epoch %d (best %.4f at %d)", epoch, best_f1, best_epoch)
            break
    if best_state is not None:
        model.load_state_dict(best_state)
    if model.banks:
        # Idempotent for a restored projected state; rebuilds provenance.
        project_prototypes(dict(model.banks), build_projection_pools(model, train_items))
        for bank in model.banks.values():
            bank.vectors.requires_grad_(False)
    model.eval()
    history.wall_clock_seconds = time.monotonic() - t0
    return model, history


# ---------------------------------------------------------------------------
# Random hyperparameter search
# ---------------------------------------------------------------------------

@dataclass
class SearchSpace:
    """Grids sampled uniformly by random_search."""

    batch_size: tuple[int, ...] = (16, 32, 64, 128)
    learning_rate: tuple[float, ...] = (1e-5, 2e-5, 5e-5)
    positive_class_weight: tuple[float, ...] = (0.2, 0.3, 0.4, 0.5)
    prototype_count: tuple[int, ...] = (6, 10, 20, 30, 40, 50)  # shared by j, k, m
    theta: tuple[float, ...] = (0.2, 0.3, 0.4)
    alpha: tuple[float, ...] = (0.001, 0.005, 0.01, 0.015, 0.02)
    beta: tuple[float, ...] = (0.005, 0.01, 0.02, 0.05, 0.1)
    gamma: tuple[float, ...] = (0.001, 0.005, 0.01, 0.015, 0.02)
    delta: tuple[float, ...] = (0.001, 0.005, 0.01, 0.015, 0.02)
    lambda1: tuple[float, ...] = (0.1, 0.3, 0.5, 0.7, 0.9)
    lambda2: tuple[float, ...] = (0.1, 0.3, 0.5, 0.7, 0.9)

    def sample(self, rng: random.Random, base: Hyperparams) -> Hyperparams:
        count = rng.choice(self.prototype_count)
        return dataclasses.replace(
            base,
            batch_size=rng.choice(self.batch_size),
            learning_rate=rng.choice(self.learning_rate),
            positive_class_weight=rng.choice(self.positive_class_weight),
            j=count, k=count, m=count,
            theta=rng.choice(self.theta),
            alpha=rng.choice(self.alpha),
            beta=rng.choice(self.beta),
            gamma=rng.choice(self.gamma),
            delta=rng.choice(self.delta),
            lambda1=rng.choice(self.lambda1),
            lambda2=rng.choice(self.lambda2),
        )


def random_search(
    space: SearchSpace,
    budget: int,
    seed: int,
    evaluate_fn: Callable[[Hyperparams], float],
    base: Hyperparams | None = None,
) -> tuple[Hyperparams, list[tuple[Hyperparams, float]]]:
    """Sample ``budget`` configurations and rank them by validation weighted F1."""
    if budget < 1:
        raise TrainingError("search budget must be >= 1")
    rng = random.Random(seed)
    base = base or Hyperparams()
    leaderboard: list[tuple[Hyperparams, float]] = []
    for trial in range(budget):
        hp = space.sample(rng, base)
        score = evaluate_fn(hp)
        leaderboard.append((hp, score))
        log.info("search trial %d/%d: weighted F1 %.4f", trial + 1, budget, score)
    leaderboard.sort(key=lambda pair: pair[1], reverse=True)
    return leaderboard[0][0], leaderboard


# ---------------------------------------------------------------------------
# Ablation harness
# ---------------------------------------------------------------------------

@dataclass
class AblationToggle:
    name: str
    use_semantic: bool = True
    use_structural: bool = True
    use_prototypes: bool = True
    components: str = "SCOE"


def default_ablation_toggles() -> list[AblationToggle]:
    out = []
    for sem, struct, tag in ((True, False, "text"), (False, True, "graph"), (True, True, "text+graph")):
        for proto in (False, True):
            suffix = "+prototypes" if proto else ""
            out.append(
                AblationToggle(
                    name=f"{tag}{suffix}",
                    use_semantic=sem, use_structural=struct, use_prototypes=proto,
                )
            )
    return out


def component_toggles(subsets: Sequence[str]) -> list[AblationToggle]:
    return [AblationToggle(name=f"components:{s}", components=s) for s in subsets]


@dataclass
class AblationReport:
    rows: list[dict]

    def render_text(self) -> str:
        width = max(len(r["name"]) for r in self.rows)
        lines = [f"{'variant'.ljust(width)}  weighted F1 (mean +/- SD over seeds)"]
        for r in self.rows:
            lines.append(f"{r['name'].ljust(width)}  {r['mean']:.4f} +/- {r['sd']:.4f}  {r['scores']}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {"rows": self.rows}


def ablation_run(
    corpus: Sequence[LabeledEmail],
    parses: Mapping[tuple[str, int], DependencyGraph],
    toggles: Sequence[AblationToggle],
    seeds: Sequence[int],
    hp: Hyperparams,
    encoder: EncoderConfig | None = None,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
) -> AblationReport:
    """Train and test every toggle configuration over the given seeds."""
    rows = []
    for toggle in toggles:
        scores = []
        for seed in seeds:
            run_hp = dataclasses.replace(hp, seed=seed)
            split = balance_and_split(corpus, seed, ratios)
            model = build_model(
                run_hp,
                encoder=encoder,
                use_semantic=toggle.use_semantic,
                use_structural=toggle.use_structural,
                use_prototypes=toggle.use_prototypes,
                components=toggle.components,
            )
            model, _ = train(model, split, run_hp, parses)
            metrics = evaluate(model, split.test, parses)
            scores.append(metrics.weighted_f1)
        arr = np.asarray(scores)
        rows.append(
            {
                "name": toggle.name,
                "scores": [round(s, 6) for s in scores],
                "mean": float(arr.mean()),
                "sd": float(arr.std(ddof=1)) if len(scores) > 1 else 0.0,
            }
        )
    return AblationReport(rows=rows)


# ---------------------------------------------------------------------------
# End-to-end run orchestration (used by the CLI)
# ---------------------------------------------------------------------------

@dataclass
class TrainedRun:
    model: MultiViewPrototypeModel
    split: SplitCorpus
    history: RunHistory
    val_metrics: Metrics
    test_metrics: Metrics
    out_dir: Path


def metrics_report(val: Metrics, test: Metrics) -> str:
    return json.dumps({"val": val.to_dict(), "test": test.to_dict()}, indent=2, sort_keys=True) + "\n"


def run_training(
    corpus: Sequence[LabeledEmail],
    parses: Mapping[tuple[str, int], DependencyGraph],
    hp: Hyperparams,
    out_dir: str | Path,
    encoder: EncoderConfig | None = None,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    model_overrides: dict | None = None,
) -> TrainedRun:
    """Split, train, evaluate, and write the full run directory."""
    from .parsing import dump_parses

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    split = balance_and_split(corpus, hp.seed, ratios)
    save_split_manifest(split, out / "split_manifest.json")
    model = build_model(hp, encoder=encoder, **(model_overrides or {}))
    (out / "config.json").write_text(
        json.dumps(
            {"hyperparams": dataclasses.asdict(hp), "model": model.config.to_dict(), "ratios": list(ratios)},
            indent=2, sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )
    model, history = train(model, split, hp, parses)
    (out / "history.jsonl").write_text(history.to_jsonl(), encoding="utf-8")
    val_metrics = evaluate(model, split.val, parses) if split.val else None
    test_metrics = evaluate(model, split.test, parses) if split.test else None
    (out / "metrics.json").write_text(metrics_report(val_metrics, test_metrics), encoding="utf-8")
    from .protonet import save_checkpoint

    train_ids = {le.email.id for le in split.train}
    ck_parses = {k: g for k, g in parses.items() if k[0] in train_ids}
    save_checkpoint(
        model, out / "checkpoint",
        sources=split.train,
        parses_text=dump_parses(ck_parses) if ck_parses else None,
    )
    return TrainedRun(
        model=model, split=split, history=history,
        val_metrics=val_metrics, test_metrics=test_metrics, out_dir=out,
    )
