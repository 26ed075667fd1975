"""Experiment orchestration: data preparation, round loop, regrouping.

A round proceeds group by group (ascending id).  Every member first downloads
its group's current global vector; a deterministic round-robin window of the
member list then trains locally while the remaining members simply keep the
downloaded vector, and the group's global is refreshed from the trainers'
results plus a snapshot of the other groups' globals.  Trained workers carry
their freshly trained vectors into the evaluation bookkeeping and only pick
up the new global when the next round begins.

Every ``eval_every``-th round each group's members are scored and regrouped;
an emptied group is retired.  The union of live groups' member lists always
equals the worker set — this is asserted after every round and boundary.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from segfl.aggregation import AggregationWeights, LocalContribution, weighted_aggregate
from segfl.flowdata import (
    CANONICAL_COLUMN_MAP,
    FEATURE_NAMES,
    LabeledDataset,
    concat_datasets,
    default_encoding,
    fit_scaler,
    parse_flow_csv,
    partition_workers,
    scale_dataset,
    train_test_split,
)
from segfl.metrics import auroc_ovr_macro, confusion, macro_f1_score, prf1
from segfl.nnet import (
    LayerSpec,
    ModelParams,
    TrainConfig,
    forward,
    init_params,
    mean_loss,
    predict,
    read_params,
    train_local,
    write_params,
)
from segfl.resample import ResampleConfig, nearmiss3_undersample
from segfl.segmentation import SegmentationConfig, eval_score, segment, threshold

logger = logging.getLogger(__name__)

MODES = ("centralized", "fl", "segmented_fl")

# Fraction of the undersampled training shard held out for validation.
VALIDATION_FRACTION = 0.10


def derive_seed(master: int, *parts) -> int:
    """Stable per-purpose seed: master entropy plus structured tags."""
    material = [int(master) & 0xFFFFFFFF]
    for part in parts:
        if isinstance(part, str):
            material.append(sum((i + 1) * b for i, b in enumerate(part.encode())) % (1 << 32))
        else:
            material.append(int(part) & 0xFFFFFFFF)
    return int(np.random.SeedSequence(material).generate_state(1)[0])


@dataclass(frozen=True)
class DataSpec:
    """Where worker shards come from: a synthetic scenario or flow files."""

    source: str = "synthetic"
    # synthetic
    n_workers: int = 4
    profiles: tuple[str, ...] = ("A", "A", "B", "B")
    sizes: tuple[int, ...] = (12000, 12000, 6000, 6000)
    divergence: float = 1.0
    class_mix: Optional[tuple[float, float, float]] = None
    # files: one parsed file per worker
    paths: tuple[str, ...] = ()
    # corpus: one file partitioned by shares
    corpus: str = ""
    shares: tuple[float, ...] = ()
    column_map: Optional[dict[str, str]] = None


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "segmented_fl"
    rounds: int = 15
    participants_per_round: Optional[int] = None  # None -> whole member list
    train: TrainConfig = TrainConfig()
    weights: AggregationWeights = AggregationWeights()
    segmentation: SegmentationConfig = SegmentationConfig()
    hidden_dims: tuple[int, ...] = (64, 32)
    resample: ResampleConfig = ResampleConfig()
    test_fraction: float = 0.10
    seed: int = 0
    data: DataSpec = DataSpec()

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.rounds < 1:
            raise ValueError(f"rounds must be >= 1, got {self.rounds}")
        if self.participants_per_round is not None and self.participants_per_round < 1:
            raise ValueError(
                f"participants_per_round must be >= 1, got {self.participants_per_round}"
            )
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError(f"test_fraction must be in (0, 1), got {self.test_fraction}")


@dataclass
class WorkerState:
    """One worker's shards, current local parameters, and score history."""

    worker_id: int
    group_id: int
    train: LabeledDataset
    validation: LabeledDataset
    test: LabeledDataset
    sample_count: int  # undersampled training-shard size, weights aggregation
    params: ModelParams
    val_history: list[float] = field(default_factory=list)


@dataclass
class GroupState:
    group_id: int
    params: ModelParams
    member_ids: list[int]
    retired: bool = False


@dataclass(frozen=True)
class WorkerRoundMetrics:
    worker_id: int
    group_id: int
    accuracy: float
    precision: tuple[float, float, float]
    recall: tuple[float, float, float]
    f1: tuple[float, float, float]
    macro_f1: float
    auroc: float
    train_loss: float


@dataclass(frozen=True)
class RoundReport:
    round_no: int
    workers: tuple[WorkerRoundMetrics, ...]


@dataclass(frozen=True)
class TimelineEvent:
    """One worker's outcome at one evaluation boundary."""

    round_no: int
    worker_id: int
    old_group: int
    new_group: int
    window_mean: float
    score: float
    cutoff: float


@dataclass(frozen=True)
class ExperimentResult:
    reports: tuple[RoundReport, ...]
    timeline: tuple[TimelineEvent, ...]
    workers: dict[int, WorkerState]
    groups: dict[int, GroupState]


@dataclass
class RunSinks:
    """Optional streaming hooks so callers can persist output as it appears."""

    on_round: Optional[Callable[[RoundReport], None]] = None
    on_timeline: Optional[Callable[[list[TimelineEvent]], None]] = None
    checkpoint_dir: Optional[Path] = None


def build_worker_data(config: ExperimentConfig) -> list[WorkerState]:
    """Prepare every worker's shards: split, scale, undersample, hold out.

    Each worker splits its raw shard into train/test, fits a min-max scaler
    on its own training rows, undersamples the scaled training shard, and
    holds out a fixed validation slice from the result.  The undersampled
    size (before the validation holdout) is the worker's aggregation weight.
    Parameters are placeholders until ``broadcast_initial``.
    """
    raw_shards = _load_raw_shards(config)
    placeholder = ModelParams(
        np.zeros(LayerSpec(len(FEATURE_NAMES), config.hidden_dims).n_params),
        LayerSpec(len(FEATURE_NAMES), config.hidden_dims),
    )
    workers = []
    for wid, shard in enumerate(raw_shards, start=1):
        train_raw, test_raw = train_test_split(
            shard, config.test_fraction, derive_seed(config.seed, "split", wid)
        )
        scaler = fit_scaler(train_raw)
        train_scaled = scale_dataset(train_raw, scaler)
        test_scaled = scale_dataset(test_raw, scaler)
        slim = nearmiss3_undersample(
            train_scaled, config.resample, derive_seed(config.seed, "resample", wid)
        )
        train_final, validation = train_test_split(
            slim, VALIDATION_FRACTION, derive_seed(config.seed, "val", wid)
        )
        workers.append(
            WorkerState(
                worker_id=wid,
                group_id=0,
                train=train_final,
                validation=validation,
                test=test_scaled,
                sample_count=slim.sample_count,
                params=placeholder.copy(),
            )
        )
    return workers


def _load_raw_shards(config: ExperimentConfig) -> list[LabeledDataset]:
    from segfl.synthgen import DEFAULT_CLASS_MIX, make_scenario

    spec = config.data
    if spec.source == "synthetic":
        scenario = make_scenario(
            n_workers=spec.n_workers,
            profiles=spec.profiles,
            sizes=spec.sizes,
            divergence=spec.divergence,
            class_mix=spec.class_mix or DEFAULT_CLASS_MIX,
            seed=derive_seed(config.seed, "data"),
        )
        return list(scenario.datasets)
    column_map = spec.column_map or dict(CANONICAL_COLUMN_MAP)
    encoding = default_encoding()
    if spec.source == "files":
        if not spec.paths:
            raise ValueError("data source 'files' needs at least one path")
        return [encoding.encode(parse_flow_csv(p, column_map)) for p in spec.paths]
    if spec.source == "corpus":
        if not spec.corpus or not spec.shares:
            raise ValueError("data source 'corpus' needs a corpus path and shares")
        corpus = encoding.encode(parse_flow_csv(spec.corpus, column_map))
        return partition_workers(corpus, list(spec.shares), derive_seed(config.seed, "partition"))
    raise ValueError(f"unknown data source {spec.source!r}")


def broadcast_initial(
    workers: list[WorkerState], config: ExperimentConfig
) -> tuple[dict[int, WorkerState], dict[int, GroupState]]:
    """Create the initial single group and push its parameters to everyone."""
    spec = LayerSpec(workers[0].train.features.shape[1], config.hidden_dims)
    global_params = init_params(spec, derive_seed(config.seed, "init"))
    group = GroupState(
        group_id=1,
        params=global_params,
        member_ids=sorted(w.worker_id for w in workers),
    )
    worker_map = {}
    for worker in workers:
        worker.group_id = group.group_id
        worker.params = global_params.copy()
        worker_map[worker.worker_id] = worker
    groups = {group.group_id: group}
    _assert_partition(worker_map, groups)
    return worker_map, groups


def _assert_partition(workers: dict[int, WorkerState], groups: dict[int, GroupState]) -> None:
    placed: list[int] = []
    for group in groups.values():
        if group.retired:
            if group.member_ids:
                raise RuntimeError(f"retired group {group.group_id} still has members")
            continue
        placed.extend(group.member_ids)
        for wid in group.member_ids:
            if workers[wid].group_id != group.group_id:
                raise RuntimeError(
                    f"worker {wid} thinks it is in group {workers[wid].group_id}, "
                    f"but group {group.group_id} lists it"
                )
    if sorted(placed) != sorted(workers):
        raise RuntimeError("live groups do not partition the worker set")


def _round_robin_window(members: list[int], round_no: int, width: Optional[int]) -> list[int]:
    """Deterministic trainer selection cycling through the member list."""
    if width is None or width >= len(members):
        return list(members)
    start = ((round_no - 1) * width) % len(members)
    return [members[(start + i) % len(members)] for i in range(width)]


def run_round(
    workers: dict[int, WorkerState],
    groups: dict[int, GroupState],
    round_no: int,
    config: ExperimentConfig,
) -> RoundReport:
    """Execute one federated round over every live group."""
    live = [groups[gid] for gid in sorted(groups) if not groups[gid].retired]
    peer_params = {g.group_id: g.params.copy() for g in live}

    for group in live:
        members = sorted(group.member_ids)
        for wid in members:
            workers[wid].params = group.params.copy()
        trainers = _round_robin_window(members, round_no, config.participants_per_round)

        contributions = []
        for wid in trainers:
            worker = workers[wid]
            trained = train_local(
                worker.params,
                worker.train,
                replace(config.train, seed=derive_seed(config.seed, "train", wid, round_no)),
            )
            worker.params = trained
            contributions.append(
                LocalContribution(params=trained, sample_count=worker.sample_count)
            )
        # Non-trainers keep the global they downloaded at round start, which
        # is exactly the pre-aggregation group vector.
        others = [peer_params[gid] for gid in sorted(peer_params) if gid != group.group_id]
        group.params = weighted_aggregate(
            peer_params[group.group_id], contributions, others, config.weights
        )

    rows = []
    for wid in sorted(workers):
        worker = workers[wid]
        worker.val_history.append(
            macro_f1_score(worker.validation.labels, predict(worker.params, worker.validation.features))
        )
        rows.append(_score_worker(worker, worker.params))
    _assert_partition(workers, groups)
    return RoundReport(round_no=round_no, workers=tuple(rows))


def _score_worker(worker: WorkerState, params: ModelParams) -> WorkerRoundMetrics:
    probs = forward(params, worker.test.features)
    preds = np.argmax(probs, axis=1)
    scores = prf1(confusion(worker.test.labels, preds))
    return WorkerRoundMetrics(
        worker_id=worker.worker_id,
        group_id=worker.group_id,
        accuracy=scores.accuracy,
        precision=tuple(scores.precision),
        recall=tuple(scores.recall),
        f1=tuple(scores.f1),
        macro_f1=scores.macro_f1,
        auroc=auroc_ovr_macro(worker.test.labels, probs),
        train_loss=mean_loss(params, worker.train),
    )


def evaluate_and_segment(
    workers: dict[int, WorkerState],
    groups: dict[int, GroupState],
    round_no: int,
    config: ExperimentConfig,
) -> list[TimelineEvent]:
    """Score every live group's members and apply the regrouping plans.

    Plans are computed against a snapshot of the boundary's memberships so
    each worker is evaluated exactly once; the live-group list grows as plans
    spawn new groups, which keeps the group cap global across the boundary.
    """
    seg = config.segmentation
    boundary_groups = [gid for gid in sorted(groups) if not groups[gid].retired]
    snapshot_members = {gid: sorted(groups[gid].member_ids) for gid in boundary_groups}

    live_ids: list[int] = list(boundary_groups)
    pending_params: dict[int, ModelParams] = {}
    pending_members: dict[int, list[int]] = {}
    next_group_id = max(groups) + 1

    fit_cache: dict[tuple[int, int], float] = {}

    def cross_fit(wid: int, gid: int) -> float:
        if (wid, gid) not in fit_cache:
            params = pending_params.get(gid) or groups[gid].params
            worker = workers[wid]
            fit_cache[(wid, gid)] = macro_f1_score(
                worker.validation.labels, predict(params, worker.validation.features)
            )
        return fit_cache[(wid, gid)]

    events: list[TimelineEvent] = []
    moves_to_apply: list[tuple[int, int]] = []
    for gid in boundary_groups:
        members = snapshot_members[gid]
        windows = {wid: workers[wid].val_history[-seg.window :] for wid in members}
        scores = eval_score(windows)
        plan = segment(
            gid,
            scores,
            live_ids,
            seg,
            {wid: workers[wid].params for wid in members},
            cross_fit,
        )

        destinations = {wid: gid for wid in plan.stay}
        destinations.update(plan.moves)
        if plan.new_group is not None:
            new_id = next_group_id
            next_group_id += 1
            live_ids.append(new_id)
            pending_params[new_id] = plan.new_group.params
            pending_members[new_id] = list(plan.new_group.member_ids)
            destinations.update({wid: new_id for wid in plan.new_group.member_ids})
        moves_to_apply.extend((wid, dest) for wid, dest in destinations.items() if dest != gid)

        cutoff = threshold(seg)
        for wid in scores.worker_ids:
            events.append(
                TimelineEvent(
                    round_no=round_no,
                    worker_id=wid,
                    old_group=gid,
                    new_group=destinations[wid],
                    window_mean=scores.mean_of(wid),
                    score=scores.score_of(wid),
                    cutoff=cutoff,
                )
            )

    for new_id, member_ids in pending_members.items():
        groups[new_id] = GroupState(
            group_id=new_id, params=pending_params[new_id], member_ids=[]
        )
    for wid, dest in moves_to_apply:
        origin = groups[workers[wid].group_id]
        origin.member_ids.remove(wid)
        groups[dest].member_ids.append(wid)
        groups[dest].member_ids.sort()
        workers[wid].group_id = dest
    for group in groups.values():
        if not group.member_ids and not group.retired:
            group.retired = True
            logger.info("group %d retired at round %d", group.group_id, round_no)

    _assert_partition(workers, groups)
    if moves_to_apply:
        logger.info(
            "round %d regrouping: %s",
            round_no,
            ", ".join(f"worker {wid} -> group {dest}" for wid, dest in moves_to_apply),
        )
    return events


def write_checkpoint(
    directory: Path,
    round_no: int,
    workers: dict[int, WorkerState],
    groups: dict[int, GroupState],
) -> Path:
    """Persist group/worker parameters and memberships for resumability."""
    target = Path(directory) / f"round_{round_no:04d}"
    target.mkdir(parents=True, exist_ok=True)
    meta = {
        "round": round_no,
        "groups": [
            {
                "id": g.group_id,
                "members": list(g.member_ids),
                "retired": g.retired,
            }
            for _, g in sorted(groups.items())
        ],
        "workers": [
            {"id": w.worker_id, "group": w.group_id, "val_history": w.val_history}
            for _, w in sorted(workers.items())
        ],
    }
    (target / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    for gid, group in sorted(groups.items()):
        write_params(group.params, target / f"group_{gid:03d}.params")
    for wid, worker in sorted(workers.items()):
        write_params(worker.params, target / f"worker_{wid:03d}.params")
    return target


def load_checkpoint(path: Path) -> dict:
    """Read back a checkpoint directory written by ``write_checkpoint``."""
    path = Path(path)
    meta = json.loads((path / "meta.json").read_text())
    return {
        "round": meta["round"],
        "groups": {
            entry["id"]: {
                "members": entry["members"],
                "retired": entry["retired"],
                "params": read_params(path / f"group_{entry['id']:03d}.params"),
            }
            for entry in meta["groups"]
        },
        "workers": {
            entry["id"]: {
                "group": entry["group"],
                "val_history": entry["val_history"],
                "params": read_params(path / f"worker_{entry['id']:03d}.params"),
            }
            for entry in meta["workers"]
        },
    }


def run_experiment(
    config: ExperimentConfig,
    sinks: Optional[RunSinks] = None,
    prepared_workers: Optional[list[WorkerState]] = None,
) -> ExperimentResult:
    """Run one experiment end to end under a single master seed.

    Args:
        config: full experiment description.
        sinks: optional streaming hooks (per-round reports, timeline events,
            checkpoint directory).
        prepared_workers: reuse shards from a previous ``build_worker_data``
            call with the same config; they are reset, not mutated.

    Returns:
        ExperimentResult with one report per round, the segmentation
        timeline (empty unless mode is segmented_fl), and final states.
    """
    sinks = sinks or RunSinks()
    if prepared_workers is None:
        workers_list = build_worker_data(config)
    else:
        workers_list = [_reset_worker(w) for w in prepared_workers]

    if config.mode == "centralized":
        return _run_centralized(workers_list, config, sinks)

    workers, groups = broadcast_initial(workers_list, config)
    reports: list[RoundReport] = []
    timeline: list[TimelineEvent] = []
    for round_no in range(1, config.rounds + 1):
        report = run_round(workers, groups, round_no, config)
        reports.append(report)
        if sinks.on_round:
            sinks.on_round(report)
        if round_no % config.segmentation.eval_every == 0:
            if config.mode == "segmented_fl":
                events = evaluate_and_segment(workers, groups, round_no, config)
                timeline.extend(events)
                if sinks.on_timeline and events:
                    sinks.on_timeline(events)
            if sinks.checkpoint_dir is not None:
                write_checkpoint(sinks.checkpoint_dir, round_no, workers, groups)
    return ExperimentResult(
        reports=tuple(reports), timeline=tuple(timeline), workers=workers, groups=groups
    )


def _reset_worker(worker: WorkerState) -> WorkerState:
    return WorkerState(
        worker_id=worker.worker_id,
        group_id=0,
        train=worker.train,
        validation=worker.validation,
        test=worker.test,
        sample_count=worker.sample_count,
        params=worker.params.copy(),
        val_history=[],
    )


def _run_centralized(
    workers_list: list[WorkerState], config: ExperimentConfig, sinks: RunSinks
) -> ExperimentResult:
    """One model on the pooled undersampled shards, scored per worker shard.

    The pooled model trains for the same total epoch count as a federated
    run (rounds x epochs) and is evaluated against every worker's test shard
    after each round-sized block so learning curves line up.
    """
    workers = {w.worker_id: w for w in workers_list}
    pooled = concat_datasets([workers[wid].train for wid in sorted(workers)])
    spec = LayerSpec(pooled.features.shape[1], config.hidden_dims)
    model = init_params(spec, derive_seed(config.seed, "init"))
    for worker in workers.values():
        worker.group_id = 1

    reports = []
    for round_no in range(1, config.rounds + 1):
        model = train_local(
            model,
            pooled,
            replace(config.train, seed=derive_seed(config.seed, "train", 0, round_no)),
        )
        rows = []
        for wid in sorted(workers):
            worker = workers[wid]
            worker.params = model.copy()
            worker.val_history.append(
                macro_f1_score(
                    worker.validation.labels, predict(model, worker.validation.features)
                )
            )
            rows.append(_score_worker(worker, model))
        report = RoundReport(round_no=round_no, workers=tuple(rows))
        reports.append(report)
        if sinks.on_round:
            sinks.on_round(report)

    groups = {
        1: GroupState(group_id=1, params=model, member_ids=sorted(workers))
    }
    return ExperimentResult(
        reports=tuple(reports), timeline=(), workers=workers, groups=groups
    )
