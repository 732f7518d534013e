"""End-to-end stages. Each stage reads the previous stage's files from ``out``."""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from dynrisk import domain, evaluation, features, gbdt, plotting, profiles, simulator
from dynrisk.config import RunConfig
from dynrisk.errors import DataError

log = logging.getLogger(__name__)

TRANSACTIONS = "transactions.jsonl"
FEEDBACK = "feedback.jsonl"
GROUND_TRUTH = "ground_truth.csv"
FRAMES = "frames.csv"
SNAPSHOT = "profile_snapshot.csv"
ASSEMBLED = "assembled.csv"
SPLITS = "splits.csv"
SUMMARY = "summary.json"
MODEL_FILES = {
    ("random", gbdt.STATIC): "model_static.json",
    ("random", gbdt.DYNAMIC): "model_dynamic.json",
    ("temporal", gbdt.STATIC): "model_static_temporal.json",
    ("temporal", gbdt.DYNAMIC): "model_dynamic_temporal.json",
}


def _need(out: Path, name: str) -> Path:
    p = out / name
    if not p.exists():
        raise DataError(f"missing artifact {p}; run the earlier stage first")
    return p


def simulate(cfg: RunConfig, out: Path) -> simulator.Stream:
    out.mkdir(parents=True, exist_ok=True)
    stream = simulator.generate_stream(cfg.script, cfg.delays, cfg.rate, cfg.horizon,
                                       cfg.seed_for("simulate"))
    domain.write_jsonl(out / TRANSACTIONS, stream.transactions)
    domain.write_jsonl(out / FEEDBACK, stream.feedback)
    simulator.write_ground_truth(out / GROUND_TRUTH, stream.labels)
    log.info("simulated %d transactions, %d feedback events",
             len(stream.transactions), len(stream.feedback))
    return stream


def load_stream(out: Path) -> simulator.Stream:
    return simulator.Stream(domain.read_transactions(_need(out, TRANSACTIONS)),
                            simulator.read_ground_truth(_need(out, GROUND_TRUTH)),
                            domain.read_feedback(_need(out, FEEDBACK)))


def profile_dump(cfg: RunConfig, out: Path, at: int | None = None) -> list[features.FeatureFrame]:
    """Compute every frame, dump frames and one audit snapshot, plot the watched entity."""
    stream = load_stream(out)
    dump_at = cfg.schedule.ticks(cfg.horizon)[-1] if at is None else at
    if not cfg.schedule.on_schedule(dump_at):
        raise DataError(f"profile dump time {dump_at} is not a schedule tick")
    snaps = []

    def grab(t, store):
        if t == dump_at:
            snaps.extend(store.snapshot(t, w) for w in profiles.WINDOWS)

    frames = features.build_frames(stream.transactions, stream.feedback, cfg.descriptors,
                                   cfg.windows, cfg.schedule, cfg.policy, cfg.alpha,
                                   until=cfg.horizon, on_tick=grab)
    features.write_frames_csv(out / FRAMES, frames, cfg.descriptors)
    profiles.write_snapshot_csv(out / SNAPSHOT, snaps)
    watch = _watch_value(cfg, frames)
    if watch is not None:
        name, value = watch
        ticks = [f.t_k for f in frames]
        attack = cfg.attack()
        plotting.entity_rate_figure(
            ticks, features.entity_series(frames, name, value, features.FR_SHORT_COUNT),
            features.entity_series(frames, name, value, features.FR_LONG_COUNT),
            out / "entity_fr.png", f"{name}={value}", attack[1] if attack else None)
    log.info("published %d frames", len(frames))
    return frames


def _watch_value(cfg: RunConfig, frames):
    if not cfg.descriptors:
        return None
    attack = cfg.attack()
    name = cfg.descriptors[0].name
    if attack is not None and cfg.descriptors[0].extractor == (cfg.script.entity_feature,):
        return name, attack[0]
    values = sorted({v for f in frames for v in f.entity[name]})
    if not values:
        return None
    peak = {v: features.entity_series(frames, name, v, features.FR_SHORT_COUNT).max()
            for v in values}
    return name, max(values, key=lambda v: (peak[v], v))


def load_frames(cfg: RunConfig, out: Path) -> list[features.FeatureFrame]:
    return features.read_frames_csv(_need(out, FRAMES), cfg.descriptors,
                                    cfg.windows.long_length, cfg.schedule.epoch)


def assemble(cfg: RunConfig, out: Path) -> pd.DataFrame:
    stream = load_stream(out)
    frames = load_frames(cfg, out)
    df = features.assemble_dataset(stream.transactions, frames, cfg.descriptors, stream.labels,
                                   warmup_length=cfg.windows.long_length,
                                   epoch=cfg.schedule.epoch)
    features.write_assembled_csv(out / ASSEMBLED, df)
    log.info("assembled %d rows x %d columns", *df.shape)
    return df


def _views(cfg: RunConfig, df: pd.DataFrame, mode: str):
    ev = cfg.evaluation
    seed = cfg.seed_for("split")
    train, test = gbdt.make_training_view(df, mode, "random", ev["train_fraction"], seed,
                                          ev["include_warmup"])
    t_train, in_time, offline = gbdt.temporal_views(df, mode, ev["train_fraction"],
                                                    ev["in_time_fraction"], seed,
                                                    ev["include_warmup"])
    return {"random": (train, test), "temporal": (t_train, in_time, offline)}


def train(cfg: RunConfig, out: Path) -> dict:
    df = features.read_assembled_csv(_need(out, ASSEMBLED))
    models = {}
    split_rows = {}
    for mode in (gbdt.STATIC, gbdt.DYNAMIC):
        views = _views(cfg, df, mode)
        for split in ("random", "temporal"):
            model = gbdt.train(views[split][0], cfg.hyperparams, mode)
            model.save(out / MODEL_FILES[(split, mode)])
            models[(split, mode)] = model
        split_rows = views
    with open(out / SPLITS, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "random", "temporal"])
        random_of = {i: "train" for i in split_rows["random"][0]["id"]}
        random_of.update({i: "test" for i in split_rows["random"][1]["id"]})
        temporal_of = {}
        for part, frame in zip(("train", "in_time", "offline"), split_rows["temporal"]):
            temporal_of.update({i: part for i in frame["id"]})
        for i in df["id"]:
            w.writerow([i, random_of.get(i, "excluded"), temporal_of.get(i, "excluded")])
    log.info("trained %d models", len(models))
    return models


def _crossing(series: np.ndarray, ticks, start: int):
    """First tick at or after ``start`` where the series reaches twice its value at ``start``."""
    k = int(np.searchsorted(ticks, start))
    if k >= len(ticks):
        return None
    level = 2.0 * series[k]
    for i in range(k, len(ticks)):
        if series[i] >= level and series[i] > 0:
            return int(ticks[i])
    return None


def sensitivity(cfg: RunConfig, frames) -> dict | None:
    attack = cfg.attack()
    if attack is None or not cfg.descriptors:
        return None
    value, start = attack
    name = cfg.descriptors[0].name
    ticks = np.array([f.t_k for f in frames])
    short = features.entity_series(frames, name, value, features.FR_SHORT_COUNT)
    long = features.entity_series(frames, name, value, features.FR_LONG_COUNT)
    return {"entity": name, "value": value, "attack_start": start,
            "short_crossing": _crossing(short, ticks, start),
            "long_crossing": _crossing(long, ticks, start)}


def evaluate(cfg: RunConfig, out: Path) -> dict:
    df = features.read_assembled_csv(_need(out, ASSEMBLED))
    models = {k: gbdt.TrainedModel.load(_need(out, f)) for k, f in MODEL_FILES.items()}
    ev = cfg.evaluation
    views = _views(cfg, df, gbdt.DYNAMIC)
    test = views["random"][1]
    labels = test["label"].to_numpy()
    scores = {m: models[("random", m)].predict_proba(gbdt.select_mode(test, m))
              for m in (gbdt.STATIC, gbdt.DYNAMIC)}
    curves = {m: evaluation.roc(scores[m], labels) for m in scores}
    for m, c in curves.items():
        evaluation.write_roc_csv(out / f"roc_{m}.csv", c)
    lift = evaluation.compare_scores(scores[gbdt.STATIC], scores[gbdt.DYNAMIC], labels,
                                     ev["fpr_anchor"], ev["tpr_anchor"])
    _, in_time, offline = views["temporal"]
    degr = evaluation.degradation_study(
        {m: (models[("temporal", m)], m) for m in (gbdt.STATIC, gbdt.DYNAMIC)}, in_time, offline)
    degr_d = evaluation.degradation_dict(degr)
    summary = {
        "seed": cfg.seed,
        "rows": {"total": int(len(df)), "test": int(len(test)), "in_time": int(len(in_time)),
                 "offline": int(len(offline))},
        "random_split": evaluation.lift_dict(lift),
        "display_cutoff_85_recall": {
            m: float(np.mean(gbdt.display_score(scores[m][labels == 1]) >= 85))
            for m in scores},
        "temporal_split": degr_d,
        "schema_hash": {f"{s}_{m}": models[(s, m)].schema_hash for s, m in models},
    }
    frames_path = out / FRAMES
    if frames_path.exists():
        summary["sensitivity"] = sensitivity(cfg, load_frames(cfg, out))
    evaluation.write_summary(out / SUMMARY, summary)
    plotting.roc_figure(curves, out / "roc.png", fpr_anchor=ev["fpr_anchor"])
    plotting.degradation_figure(degr_d, out / "degradation.png")
    log.info("dynamic AUC %.4f vs static %.4f", lift.auc_dynamic, lift.auc_static)
    return summary


def run(cfg: RunConfig, out: Path) -> dict:
    simulate(cfg, out)
    profile_dump(cfg, out)
    assemble(cfg, out)
    train(cfg, out)
    return evaluate(cfg, out)
