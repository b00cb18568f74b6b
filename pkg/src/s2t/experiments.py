"""Experiment commands behind the CLI: data generation, training, inference,
evaluation, statistics, and the prompt ablation.

Configuration is one flat JSON object with dot-namespaced keys (train.lr,
loss.lambda_tc, detector.pooling, ...). Every command writes a RunManifest
capturing the config snapshot, input checksums, per-epoch history, and
output paths, which is enough to re-execute the run.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .annotations import (
    MatchAnnotation,
    TacticState,
    TacticType,
    dataset_stats,
    parse_match,
    split_by_match,
)
from .captioner import (
    CaptionerConfig,
    ShotCaptioner,
    ShotPair,
    TacticCaptioner,
    TacticPair,
    Vocabulary,
    build_prompt,
    caption_shot,
    caption_tactic,
    train_captioners,
)
from .detector import (
    DetectorConfig,
    DetectorWindow,
    TacticUnitDetector,
    detect,
    report_detector_metrics,
    train_detector,
)
from .errors import ConfigError, SchemaError, UnknownCommand
from .grammar import Grammar, default_grammar, enumerate_candidates, load_grammar
from .losses import LossWeights, MarginSchedule, inverse_frequency_weights
from .metrics import EvalPair, score_all
from .reports import (
    render_ablation,
    render_caption_stats,
    render_loss_curves,
    render_metric_table,
)
from .storage import file_checksum, load_checkpoint, read_feature_file, save_checkpoint
from .synthetic import SyntheticConfig, generate_corpus, write_corpus
from .train import RunManifest, TrainConfig

__all__ = ["ExperimentConfig", "load_config", "run_experiment", "COMMANDS"]

COMMANDS = (
    "generate-synthetic", "train-detector", "train-captioners",
    "detect", "caption", "evaluate", "stats", "ablate-prompt",
)

TYPE_INDEX = {t: i for i, t in enumerate(TacticType)}
STATE_INDEX = {s: i for i, s in enumerate(TacticState)}


@dataclass
class ExperimentConfig:
    data_dir: str | None = None
    grammar_path: str | None = None
    predictions_path: str | None = None
    num_matches: int = 10
    strict: bool = False
    prompt_mode: str | None = "shot_wise"
    min_token_freq: int = 2
    max_shot_len: int = 24
    max_tactic_len: int = 110
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    margin: MarginSchedule = field(default_factory=MarginSchedule)
    detector: DetectorConfig | None = None
    captioner_base: dict = field(default_factory=dict)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)

    def grammar(self) -> Grammar:
        return load_grammar(self.grammar_path) if self.grammar_path else default_grammar()

    def detector_config(self) -> DetectorConfig:
        if self.detector is not None:
            return self.detector
        return DetectorConfig(in_dim=self.synthetic.embed_dim)

    def captioner_configs(self) -> tuple[CaptionerConfig, CaptionerConfig]:
        base = dict(self.captioner_base)
        base.setdefault("in_dim", self.synthetic.embed_dim)
        shot = CaptionerConfig(max_caption_len=self.max_shot_len, **base)
        tactic = CaptionerConfig(max_caption_len=self.max_tactic_len, **base)
        return shot, tactic

    def snapshot(self) -> dict:
        return {
            "data_dir": self.data_dir,
            "grammar_path": self.grammar_path,
            "predictions_path": self.predictions_path,
            "num_matches": self.num_matches,
            "strict": self.strict,
            "prompt_mode": self.prompt_mode,
            "min_token_freq": self.min_token_freq,
            "max_shot_len": self.max_shot_len,
            "max_tactic_len": self.max_tactic_len,
            "train": asdict(self.train),
            "loss": asdict(self.loss),
            "margin": asdict(self.margin),
            "detector": asdict(self.detector_config()),
            "captioner_base": dict(self.captioner_base),
            "synthetic": {**asdict(self.synthetic),
                          "frame_grid": list(self.synthetic.frame_grid)},
        }


# --------------------------------------------------------------------------
# flat-key config parsing

_KEYMAP = {
    "data.dir": ("data_dir", str),
    "data.grammar": ("grammar_path", str),
    "data.predictions": ("predictions_path", str),
    "data.num_matches": ("num_matches", int),
    "data.strict": ("strict", bool),
    "captioner.prompt": ("prompt_mode", str),
    "captioner.min_token_freq": ("min_token_freq", int),
    "captioner.max_shot_len": ("max_shot_len", int),
    "captioner.max_tactic_len": ("max_tactic_len", int),
}

_TRAIN_KEYS = {
    "train.epochs": ("epochs", int),
    "train.lr": ("learning_rate", float),
    "train.weight_decay": ("weight_decay", float),
    "train.batch_size": ("batch_size", int),
    "train.warmup_fraction": ("warmup_fraction", float),
    "train.seed": ("seed", int),
    "train.constant_after_warmup": ("constant_after_warmup", bool),
}

_LOSS_KEYS = {
    "loss.lambda_margin": ("lambda_margin", float),
    "loss.beta": ("beta", float),
    "loss.lambda_sc": ("lambda_sc", float),
    "loss.lambda_tc": ("lambda_tc", float),
    "loss.gamma": ("gamma", float),
    "loss.alpha_binary": ("alpha_binary", float),
    "loss.alpha_type": ("alpha_type", tuple),
}

_MARGIN_KEYS = {
    "margin.m_start": ("m_start", float),
    "margin.m_end": ("m_end", float),
    "margin.warmup_epochs": ("warmup_epochs", int),
}

_DETECTOR_KEYS = {
    "detector.in_dim": ("in_dim", int),
    "detector.shot_frames": ("shot_frames", int),
    "detector.encoder_dim": ("encoder_dim", int),
    "detector.encoder_layers": ("encoder_layers", int),
    "detector.heads": ("heads", int),
    "detector.pooling": ("pooling", str),
    "detector.binary_threshold": ("binary_threshold", float),
    "detector.per_shot_states": ("per_shot_states", bool),
}

_CAPTIONER_KEYS = {
    "captioner.in_dim": ("in_dim", int),
    "captioner.embed_dim": ("embed_dim", int),
    "captioner.encoder_layers": ("encoder_layers", int),
    "captioner.decoder_layers": ("decoder_layers", int),
    "captioner.heads": ("heads", int),
    "captioner.decode": ("decode", str),
    "captioner.beam_size": ("beam_size", int),
}

_SYNTHETIC_KEYS = {
    "synthetic.seed": ("seed", int),
    "synthetic.num_rallies": ("num_rallies", int),
    "synthetic.valid_fraction": ("valid_fraction", float),
    "synthetic.noise_std": ("feature_noise_std", float),
    "synthetic.frames_per_shot": ("frames_per_shot", int),
    "synthetic.embed_dim": ("embed_dim", int),
}


def _cast(value, caster, key: str):
    try:
        if caster is bool:
            if isinstance(value, bool):
                return value
            raise ConfigError(f"{key}: expected true/false")
        if caster is tuple:
            return tuple(value)
        return caster(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: {exc}") from None


def config_from_mapping(flat: dict) -> ExperimentConfig:
    """Build an ExperimentConfig from flat dot-namespaced keys."""
    if not isinstance(flat, dict):
        raise ConfigError("config must be a JSON object of namespaced keys")
    top: dict = {}
    sections: dict[str, dict] = {"train": {}, "loss": {}, "margin": {},
                                 "detector": {}, "captioner": {}, "synthetic": {}}
    grid = {}
    for key, value in flat.items():
        if key in _KEYMAP:
            attr, caster = _KEYMAP[key]
            top[attr] = _cast(value, caster, key)
        elif key in _TRAIN_KEYS:
            attr, caster = _TRAIN_KEYS[key]
            sections["train"][attr] = _cast(value, caster, key)
        elif key in _LOSS_KEYS:
            attr, caster = _LOSS_KEYS[key]
            sections["loss"][attr] = _cast(value, caster, key)
        elif key in _MARGIN_KEYS:
            attr, caster = _MARGIN_KEYS[key]
            sections["margin"][attr] = _cast(value, caster, key)
        elif key in _DETECTOR_KEYS:
            attr, caster = _DETECTOR_KEYS[key]
            sections["detector"][attr] = _cast(value, caster, key)
        elif key in _CAPTIONER_KEYS:
            attr, caster = _CAPTIONER_KEYS[key]
            sections["captioner"][attr] = _cast(value, caster, key)
        elif key in _SYNTHETIC_KEYS:
            attr, caster = _SYNTHETIC_KEYS[key]
            sections["synthetic"][attr] = _cast(value, caster, key)
        elif key in ("synthetic.grid_h", "synthetic.grid_w"):
            grid[key] = _cast(value, int, key)
        else:
            raise ConfigError(f"unknown config key '{key}'")
    if grid:
        h = grid.get("synthetic.grid_h", 2)
        w = grid.get("synthetic.grid_w", 2)
        sections["synthetic"]["frame_grid"] = (h, w)
    if top.get("prompt_mode") in ("none", "null", ""):
        top["prompt_mode"] = None
    try:
        return ExperimentConfig(
            **top,
            train=TrainConfig(**sections["train"]),
            loss=LossWeights(**sections["loss"]),
            margin=MarginSchedule(**sections["margin"]),
            detector=DetectorConfig(**sections["detector"]) if sections["detector"] else None,
            captioner_base=sections["captioner"],
            synthetic=SyntheticConfig(**sections["synthetic"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        flat = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_mapping(flat)


# --------------------------------------------------------------------------
# data plumbing

def resolve_data_dir(config: ExperimentConfig, out_dir: Path) -> Path:
    env = os.environ.get("S2T_DATA_DIR")
    if env:
        return Path(env)
    if config.data_dir:
        return Path(config.data_dir)
    return out_dir / "data"


def load_matches(data_dir: Path, strict: bool = False) -> list[MatchAnnotation]:
    paths = sorted(Path(data_dir).glob("*.json"))
    if not paths:
        raise FileNotFoundError(f"no match files under {data_dir}")
    return [parse_match(p.read_text(encoding="utf-8"), strict=strict) for p in paths]


def _match_checksums(data_dir: Path) -> dict[str, str]:
    return {p.name: file_checksum(p) for p in sorted(Path(data_dir).glob("*.json"))}


def _shot_features(data_dir: Path, match: MatchAnnotation,
                   rally_idx: int, shot_idx: int) -> np.ndarray:
    shot = match.rallies[rally_idx].shots[shot_idx]
    if shot.features is None:
        raise SchemaError("shot has no feature file reference",
                          f"{match.video_id}.rallies[{rally_idx}].shots[{shot_idx}]")
    return read_feature_file(Path(data_dir) / shot.features)


def windows_from_matches(matches: list[MatchAnnotation], data_dir: Path
                         ) -> list[DetectorWindow]:
    """Labelled training windows: one per annotated unit (positive) and one
    per unit-free rally of window size (negative)."""
    windows = []
    for match in matches:
        for r, rally in enumerate(match.rallies):
            if rally.tactic_units:
                for unit in rally.tactic_units:
                    feats = np.stack([
                        _shot_features(data_dir, match, r, j)
                        for j in unit.shot_indices])
                    windows.append(DetectorWindow(
                        features=feats, label=1,
                        type_index=TYPE_INDEX[unit.tactic_type],
                        state_indices=tuple(STATE_INDEX[s] for s in unit.states)))
            elif len(rally.shots) in (5, 7, 9):
                feats = np.stack([
                    _shot_features(data_dir, match, r, j)
                    for j in range(len(rally.shots))])
                windows.append(DetectorWindow(features=feats, label=0))
    return windows


def caption_pairs_from_matches(matches: list[MatchAnnotation], data_dir: Path
                               ) -> tuple[list[ShotPair], list[TacticPair]]:
    shot_pairs = []
    tactic_pairs = []
    for match in matches:
        for r, rally in enumerate(match.rallies):
            for j, shot in enumerate(rally.shots):
                shot_pairs.append(ShotPair(
                    features=_shot_features(data_dir, match, r, j),
                    caption=shot.caption))
            for unit in rally.tactic_units:
                tactic_pairs.append(TacticPair(
                    shots=[_shot_features(data_dir, match, r, j)
                           for j in unit.shot_indices],
                    tactic_type=unit.tactic_type,
                    states=unit.states,
                    caption=unit.caption))
    return shot_pairs, tactic_pairs


def module_tensors(module: torch.nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def load_module_tensors(module: torch.nn.Module, tensors: dict[str, np.ndarray]) -> None:
    module.load_state_dict({k: torch.as_tensor(v) for k, v in tensors.items()})


def save_detector_checkpoint(path: Path, model: TacticUnitDetector) -> None:
    save_checkpoint(path, module_tensors(model), {"detector": asdict(model.cfg)})


def load_detector_checkpoint(path: Path) -> TacticUnitDetector:
    config, tensors = load_checkpoint(path)
    model = TacticUnitDetector(DetectorConfig(**config["detector"]))
    load_module_tensors(model, tensors)
    return model


def save_captioner_checkpoint(path: Path, shot_model: ShotCaptioner,
                              tactic_model: TacticCaptioner, vocab: Vocabulary,
                              prompt_mode: str | None) -> None:
    tensors = {f"shot.{k}": v for k, v in module_tensors(shot_model).items()}
    tensors.update({f"tactic.{k}": v for k, v in module_tensors(tactic_model).items()})
    save_checkpoint(path, tensors, {
        "shot_captioner": asdict(shot_model.cfg),
        "tactic_captioner": asdict(tactic_model.cfg),
        "vocab": vocab.id_to_token,
        "prompt_mode": prompt_mode,
    })


def load_captioner_checkpoint(path: Path
                              ) -> tuple[ShotCaptioner, TacticCaptioner, Vocabulary, str | None]:
    config, tensors = load_checkpoint(path)
    vocab = Vocabulary([])
    vocab.id_to_token = list(config["vocab"])
    vocab.token_to_id = {t: i for i, t in enumerate(vocab.id_to_token)}
    shot_model = ShotCaptioner(CaptionerConfig(**config["shot_captioner"]), len(vocab))
    tactic_model = TacticCaptioner(CaptionerConfig(**config["tactic_captioner"]), len(vocab))
    load_module_tensors(shot_model, {
        k[len("shot."):]: v for k, v in tensors.items() if k.startswith("shot.")})
    load_module_tensors(tactic_model, {
        k[len("tactic."):]: v for k, v in tensors.items() if k.startswith("tactic.")})
    return shot_model, tactic_model, vocab, config.get("prompt_mode")


# --------------------------------------------------------------------------
# commands

def _cmd_generate(config: ExperimentConfig, out_dir: Path) -> RunManifest:
    data_dir = resolve_data_dir(config, out_dir)
    samples = generate_corpus(config.synthetic, config.grammar())
    paths = write_corpus(samples, data_dir, config.num_matches)
    manifest = RunManifest(
        command="generate-synthetic",
        config=config.snapshot(),
        seed=config.synthetic.seed,
        data_checksums={p.name: file_checksum(p) for p in paths},
        outputs={"data_dir": str(data_dir)},
    )
    return manifest


def _detector_training_setup(config: ExperimentConfig, data_dir: Path):
    matches = load_matches(data_dir, config.strict)
    train_m, val_m, test_m = split_by_match(matches, seed=config.train.seed)
    train_w = windows_from_matches(train_m, data_dir)
    val_w = windows_from_matches(val_m, data_dir)
    test_w = windows_from_matches(test_m, data_dir)
    weights = config.loss
    if weights.alpha_type is None:
        counts = [0] * len(TacticType)
        for w in train_w:
            if w.label == 1:
                counts[w.type_index] += 1
        if any(counts):
            weights = replace(weights, alpha_type=inverse_frequency_weights(counts))
    return train_w, val_w, test_w, weights


def evaluate_detector(model: TacticUnitDetector, windows: list[DetectorWindow]) -> dict:
    """Binary metrics over all windows; type/state metrics over the true
    positives with stage 2 forced, mirroring per-component reporting."""
    binary_pred, binary_true = [], []
    type_pred, type_true = [], []
    state_pred, state_true = [], []
    with torch.no_grad():
        for window in windows:
            feats = torch.as_tensor(window.features, dtype=torch.float32).unsqueeze(0)
            out = model(feats)
            prob = float(torch.sigmoid(out["binary_logit"])[0])
            binary_pred.append(int(prob >= model.cfg.binary_threshold))
            binary_true.append(window.label)
            if window.label == 1:
                type_pred.append(int(torch.argmax(out["type_logits"][0])))
                type_true.append(window.type_index)
                states = torch.argmax(out["state_logits"][0], dim=-1).tolist()
                if model.cfg.per_shot_states:
                    state_pred.extend(int(s) for s in states)
                    state_true.extend(window.state_indices)
                else:
                    state_pred.append(int(states[0]))
                    state_true.append(window.state_indices[-1])
    report = {"binary": report_detector_metrics(binary_pred, binary_true)}
    if type_true:
        report["type"] = report_detector_metrics(type_pred, type_true)
        report["state"] = report_detector_metrics(state_pred, state_true)
    return report


def _cmd_train_detector(config: ExperimentConfig, out_dir: Path) -> RunManifest:
    data_dir = resolve_data_dir(config, out_dir)
    train_w, val_w, test_w, weights = _detector_training_setup(config, data_dir)
    model, history = train_detector(
        train_w, config.detector_config(), weights,
        epochs=config.train.epochs, train_cfg=config.train, schedule=config.margin)
    ckpt = out_dir / "detector.ckpt"
    save_detector_checkpoint(ckpt, model)
    metrics = {
        "val": evaluate_detector(model, val_w) if val_w else {},
        "test": evaluate_detector(model, test_w) if test_w else {},
    }
    (out_dir / "detector_metrics.json").write_text(
        json.dumps(metrics, indent=2, sort_keys=True), encoding="utf-8")
    outputs = {"detector_metrics": str(out_dir / "detector_metrics.json")}
    outputs.update(render_loss_curves(history, out_dir, "detector"))
    return RunManifest(
        command="train-detector", config=config.snapshot(), seed=config.train.seed,
        data_checksums=_match_checksums(data_dir), history=history,
        checkpoints={"detector": str(ckpt)}, outputs=outputs)


def _cmd_train_captioners(config: ExperimentConfig, out_dir: Path) -> RunManifest:
    data_dir = resolve_data_dir(config, out_dir)
    matches = load_matches(data_dir, config.strict)
    train_m, _, _ = split_by_match(matches, seed=config.train.seed)
    shot_pairs, tactic_pairs = caption_pairs_from_matches(train_m, data_dir)
    captions = [p.caption for p in shot_pairs] + [p.caption for p in tactic_pairs]
    vocab = Vocabulary.build(captions, min_freq=config.min_token_freq)
    shot_cfg, tactic_cfg = config.captioner_configs()
    shot_model, tactic_model, history = train_captioners(
        shot_pairs, tactic_pairs, vocab, shot_cfg, tactic_cfg,
        config.loss, config.train, prompt_mode=config.prompt_mode)
    ckpt = out_dir / "captioners.ckpt"
    save_captioner_checkpoint(ckpt, shot_model, tactic_model, vocab, config.prompt_mode)
    outputs = render_loss_curves(history, out_dir, "captioners")
    return RunManifest(
        command="train-captioners", config=config.snapshot(), seed=config.train.seed,
        data_checksums=_match_checksums(data_dir), history=history,
        checkpoints={"captioners": str(ckpt)}, outputs=outputs)


def _cmd_detect(config: ExperimentConfig, out_dir: Path) -> RunManifest:
    data_dir = resolve_data_dir(config, out_dir)
    matches = load_matches(data_dir, config.strict)
    model = load_detector_checkpoint(out_dir / "detector.ckpt")
    rows = []
    for match in matches:
        for r, rally in enumerate(match.rallies):
            types = [s.shot_type for s in rally.shots]
            for window in enumerate_candidates(len(rally.shots), r, types):
                feats = np.stack([
                    _shot_features(data_dir, match, r, j)
                    for j in range(window.first_shot, window.first_shot + window.length)])
                output = detect(feats, model)
                rows.append({
                    "video": match.video_id, "rally": r,
                    "first_shot": window.first_shot, "length": window.length,
                    **output.to_json(),
                })
    out_path = out_dir / "detections.json"
    out_path.write_text(json.dumps(rows, indent=2), encoding="utf-8")
    return RunManifest(
        command="detect", config=config.snapshot(), seed=config.train.seed,
        data_checksums=_match_checksums(data_dir),
        outputs={"detections": str(out_path)})


def _cmd_caption(config: ExperimentConfig, out_dir: Path) -> RunManifest:
    data_dir = resolve_data_dir(config, out_dir)
    matches = load_matches(data_dir, config.strict)
    shot_model, tactic_model, vocab, prompt_mode = load_captioner_checkpoint(
        out_dir / "captioners.ckpt")
    result: dict[str, list] = {"shot": [], "tactic": []}
    for match in matches:
        for r, rally in enumerate(match.rallies):
            for j, shot in enumerate(rally.shots):
                tokens = caption_shot(
                    shot_model, _shot_features(data_dir, match, r, j), vocab)
                result["shot"].append({
                    "video": match.video_id, "rally": r, "shot": j,
                    "prediction": " ".join(tokens), "reference": shot.caption})
            for u, unit in enumerate(rally.tactic_units):
                feats = [_shot_features(data_dir, match, r, j) for j in unit.shot_indices]
                prompt = None
                if prompt_mode is not None:
                    prompt = build_prompt(unit.tactic_type, unit.states, prompt_mode)
                tokens = caption_tactic(tactic_model, feats, prompt, vocab)
                result["tactic"].append({
                    "video": match.video_id, "rally": r, "unit": u,
                    "prediction": " ".join(tokens), "reference": unit.caption})
    out_path = out_dir / "captions.json"
    out_path.write_text(json.dumps(result, indent=2), encoding="utf-8")
    return RunManifest(
        command="caption", config=config.snapshot(), seed=config.train.seed,
        data_checksums=_match_checksums(data_dir),
        outputs={"captions": str(out_path)})


def _pairs_from_prediction_rows(rows: list[dict]) -> list[EvalPair]:
    return [
        EvalPair(tuple(Vocabulary.tokenize(row["prediction"])),
                 (tuple(Vocabulary.tokenize(row["reference"])),))
        for row in rows
    ]


def _cmd_evaluate(config: ExperimentConfig, out_dir: Path) -> RunManifest:
    pred_path = Path(config.predictions_path) if config.predictions_path \
        else out_dir / "captions.json"
    doc = json.loads(pred_path.read_text(encoding="utf-8"))
    tables = {}
    for granularity in ("shot", "tactic"):
        rows = doc.get(granularity, [])
        if rows:
            tables[granularity] = score_all(_pairs_from_prediction_rows(rows))
    out_path = out_dir / "metrics.json"
    out_path.write_text(json.dumps(tables, indent=2, sort_keys=True), encoding="utf-8")
    outputs = {"metrics": str(out_path)}
    outputs.update(render_metric_table(tables, out_dir))
    lines = []
    for granularity, table in tables.items():
        for metric, value in sorted(table.items()):
            lines.append(f"{granularity:8s} {metric:12s} {value:.4f}")
    (out_dir / "metrics.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return RunManifest(
        command="evaluate", config=config.snapshot(), seed=config.train.seed,
        data_checksums={pred_path.name: file_checksum(pred_path)},
        outputs=outputs)


def _cmd_stats(config: ExperimentConfig, out_dir: Path) -> RunManifest:
    data_dir = resolve_data_dir(config, out_dir)
    matches = load_matches(data_dir, config.strict)
    stats = dataset_stats(matches)
    payload = {
        granularity: {
            "count": s.count,
            "mean_length": s.mean_length,
            "min_length": s.min_length,
            "max_length": s.max_length,
            "length_histogram": {str(k): v for k, v in s.length_histogram.items()},
            "word_frequencies": s.word_frequencies,
        }
        for granularity, s in stats.items()
    }
    out_path = out_dir / "stats.json"
    out_path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    outputs = {"stats": str(out_path)}
    outputs.update(render_caption_stats(stats, out_dir))
    return RunManifest(
        command="stats", config=config.snapshot(), seed=config.train.seed,
        data_checksums=_match_checksums(data_dir), outputs=outputs)


def ablate_prompt(config: ExperimentConfig, out_dir: Path) -> tuple[list[dict], RunManifest]:
    """Train and evaluate the three prompt settings on identical data and
    seed; returns one comparison row per (setting, granularity)."""
    data_dir = resolve_data_dir(config, out_dir)
    matches = load_matches(data_dir, config.strict)
    train_m, _, test_m = split_by_match(matches, seed=config.train.seed)
    shot_pairs, tactic_pairs = caption_pairs_from_matches(train_m, data_dir)
    test_shot, test_tactic = caption_pairs_from_matches(test_m, data_dir)
    captions = [p.caption for p in shot_pairs] + [p.caption for p in tactic_pairs]
    vocab = Vocabulary.build(captions, min_freq=config.min_token_freq)
    shot_cfg, tactic_cfg = config.captioner_configs()
    checksums = _match_checksums(data_dir)

    rows = []
    for setting, mode in (("w/o prompt", None), ("flat", "flat"), ("shot-wise", "shot_wise")):
        shot_model, tactic_model, _ = train_captioners(
            shot_pairs, tactic_pairs, vocab, shot_cfg, tactic_cfg,
            config.loss, config.train, prompt_mode=mode)
        shot_eval = [
            EvalPair(tuple(caption_shot(shot_model, p.features, vocab)),
                     (tuple(vocab.tokenize(p.caption)),))
            for p in test_shot]
        tactic_eval = [
            EvalPair(tuple(caption_tactic(
                tactic_model, p.shots,
                build_prompt(p.tactic_type, p.states, mode) if mode else None,
                vocab)),
                (tuple(vocab.tokenize(p.caption)),))
            for p in test_tactic]
        for granularity, pairs in (("shot", shot_eval), ("tactic", tactic_eval)):
            if pairs:
                rows.append({"prompt": setting, "granularity": granularity,
                             **score_all(pairs)})
    manifest = RunManifest(
        command="ablate-prompt", config=config.snapshot(), seed=config.train.seed,
        data_checksums=checksums, history=rows,
        outputs=render_ablation(rows, out_dir))
    return rows, manifest


def run_experiment(command: str, config: ExperimentConfig,
                   out_dir: str | Path, seed: int | None = None) -> RunManifest:
    """Dispatch one experiment command; writes manifest.json under out_dir."""
    if command not in COMMANDS:
        raise UnknownCommand(f"unknown command '{command}'; choose from {COMMANDS}")
    if seed is not None:
        config = replace(config,
                         train=replace(config.train, seed=seed),
                         synthetic=replace(config.synthetic, seed=seed))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    handlers = {
        "generate-synthetic": _cmd_generate,
        "train-detector": _cmd_train_detector,
        "train-captioners": _cmd_train_captioners,
        "detect": _cmd_detect,
        "caption": _cmd_caption,
        "evaluate": _cmd_evaluate,
        "stats": _cmd_stats,
        "ablate-prompt": lambda cfg, out: ablate_prompt(cfg, out)[1],
    }
    manifest = handlers[command](config, out_dir)
    manifest.save(out_dir / "manifest.json")
    return manifest
