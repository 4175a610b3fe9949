"""``vlprompt`` command line.

Every failure prints one line ``error code=<n> kind=<kind>: <message>`` to
stderr and exits with that code: 2 config, 3 data, 4 backend, 5 verification.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import RunConfig, load_config
from .gradsuite import run_suite
from .language import (
    BackendError,
    FeatureDB,
    FeatureDBError,
    IncompleteBuildError,
    MockChat,
    MockEncoder,
    RemoteChat,
    RemoteEncoder,
    build_feature_db,
    build_rj_prompt,
    build_rp_prompt,
    render_dialogue,
)
from .metrics import TripletPrediction, aggregate, match_and_score
from .numerics import CheckpointError, ConfigError
from .prompter import RelationModel
from .scene import SceneError, VocabularyError, list_scene_dirs, load_scene, save_scene
from .synth import SynthError, synth_knowledge, synth_scene, synth_vocabulary
from .train import evaluate, load_model, predict_scene, prepare_examples, save_model, train, write_json

log = logging.getLogger("vlprompt")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_BACKEND, EXIT_VERIFY = 0, 2, 3, 4, 5
_KINDS = {EXIT_CONFIG: "config", EXIT_DATA: "data", EXIT_BACKEND: "backend", EXIT_VERIFY: "verification"}


class CommandError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # single-line errors instead of usage dumps
        raise CommandError(EXIT_CONFIG, f"{self.prog}: {message}")


# ------------------------------------------------------------------ helpers

def _backends(cfg: RunConfig):
    if cfg.mode == "remote":
        return RemoteChat(cfg.llm), RemoteEncoder(cfg.encoder)
    knowledge = None
    if cfg.knowledge:
        path = Path(cfg.knowledge)
        if not path.is_file():
            raise CommandError(EXIT_DATA, f"knowledge file {path} does not exist")
        knowledge = json.loads(path.read_text())
    return MockChat(cfg.mock_seed, knowledge), MockEncoder(cfg.model.d_l, cfg.mock_seed)


def _load_scenes(root, vocabulary):
    root = Path(root)
    if not root.is_dir():
        raise CommandError(EXIT_DATA, f"scene directory {root} does not exist")
    dirs = list_scene_dirs(root)
    if not dirs:
        raise CommandError(EXIT_DATA, f"no scenes under {root}")
    return dirs, [load_scene(d, vocabulary) for d in dirs]


def _load_dbs(cfg: RunConfig, vocabulary):
    return (FeatureDB.load(cfg.db_rp, vocabulary, kind="rp"), FeatureDB.load(cfg.db_rj, vocabulary, kind="rj"))


def _ensure_parent(path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)


def _override(cfg: RunConfig, args, mapping: dict[str, str]) -> None:
    for flag, target in mapping.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        obj = cfg
        *path, leaf = target.split(".")
        for part in path:
            obj = getattr(obj, part)
        setattr(obj, leaf, value)


# ------------------------------------------------------------------ commands

def cmd_gen_prompts(cfg: RunConfig, args) -> int:
    vocab = cfg.load_vocabulary()
    if args.rel is not None:
        messages = build_rj_prompt(args.sub, args.rel, args.obj, vocab, llama=cfg.llama)
    else:
        messages = build_rp_prompt(args.sub, args.obj, vocab, llama=cfg.llama)
    sys.stdout.write(render_dialogue(messages))
    return EXIT_OK


def cmd_synth(cfg: RunConfig, args) -> int:
    s = cfg.synth
    vocab = synth_vocabulary(s.params.num_categories, s.params.num_relations)
    root = Path(cfg.scene_dir)
    root.mkdir(parents=True, exist_ok=True)
    vocab.save(root / "vocabulary.json")
    write_json(root / "knowledge.json", synth_knowledge(s.params, vocab))
    for n in range(s.num_scenes):
        seed = s.first_seed + n
        save_scene(synth_scene(seed, s.params, vocabulary="vocabulary.json"), root / f"scene_{seed:05d}")
    print(f"wrote {s.num_scenes} scenes, vocabulary.json and knowledge.json to {root}")
    return EXIT_OK


def cmd_build_db(cfg: RunConfig, args) -> int:
    vocab = cfg.load_vocabulary()
    llm, encoder = _backends(cfg)
    kinds = ("rp", "rj") if args.kind == "both" else (args.kind,)
    for kind in kinds:
        path = Path(cfg.db_rp if kind == "rp" else cfg.db_rj)
        _ensure_parent(path)
        db = build_feature_db(vocab, llm, encoder, kind, path=path, same_category=cfg.same_category,
                              jobs=cfg.jobs, rate_limit=cfg.rate_limit, llama=cfg.llama)
        print(f"{kind}: {len(db)} entries in {path}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    vocab = cfg.load_vocabulary()
    _, scenes = _load_scenes(cfg.scene_dir, vocab)
    db_rp, db_rj = _load_dbs(cfg, vocab)
    examples = prepare_examples(scenes, db_rp, db_rj, vocab)
    model = RelationModel(cfg.model.model_config(vocab.num_relations), seed=cfg.seed)
    _ensure_parent(cfg.train_log)
    result = train(model, examples, cfg.train, log_path=cfg.train_log)
    save_model(cfg.checkpoint, model, {"vocab_digest": vocab.digest, "train": {
        "steps": cfg.train.steps, "lr": cfg.train.lr, "weight_decay": cfg.train.weight_decay,
        "milestones": list(cfg.train.milestones), "gamma": cfg.train.gamma, "seed": cfg.train.seed,
        "batch_size": cfg.train.batch_size, "lam": cfg.train.lam}})
    print(f"trained {cfg.train.steps} steps, final loss {result.losses[-1]:.6f}; checkpoint {cfg.checkpoint}")
    return EXIT_OK


def _load_checked_model(cfg: RunConfig, vocab) -> RelationModel:
    model, extra = load_model(cfg.checkpoint)
    if extra.get("vocab_digest") not in (None, vocab.digest):
        raise CommandError(EXIT_DATA, f"checkpoint {cfg.checkpoint} was trained for a different vocabulary")
    if model.cfg.num_relations != vocab.num_relations:
        raise CommandError(EXIT_DATA, f"checkpoint predicts {model.cfg.num_relations} relations, "
                                      f"vocabulary has {vocab.num_relations}")
    return model


def _read_predictions(path) -> dict[str, list[TripletPrediction]]:
    try:
        data = json.loads(Path(path).read_text())
        return {name: [TripletPrediction(int(t["subject"]), int(t["object"]), int(t["relation"]),
                                         float(t["score"])) for t in rows]
                for name, rows in data["scenes"].items()}
    except FileNotFoundError:
        raise CommandError(EXIT_DATA, f"predictions file {path} does not exist") from None
    except (KeyError, TypeError, ValueError) as e:
        raise CommandError(EXIT_DATA, f"predictions file {path} is malformed: {e}") from None


def cmd_eval(cfg: RunConfig, args) -> int:
    vocab = cfg.load_vocabulary()
    dirs, scenes = _load_scenes(cfg.scene_dir, vocab)
    if args.predictions:
        preds = _read_predictions(args.predictions)
        absent = [d.name for d in dirs if d.name not in preds]
        if absent:
            raise CommandError(EXIT_DATA, f"predictions missing for scene(s) {', '.join(absent[:5])}")
        for d, s in zip(dirs, scenes):
            for p in preds[d.name]:
                if not (0 <= p.subject < s.num_objects and 0 <= p.object < s.num_objects
                        and p.subject != p.object and 0 <= p.relation < s.num_relations):
                    raise CommandError(EXIT_DATA, f"{d.name}: prediction {p} is out of range")
        results = [match_and_score(sorted(preds[d.name], key=lambda p: -p.score), s)
                   for d, s in zip(dirs, scenes)]
        report = aggregate(results, vocab.relation_names)
    else:
        db_rp, db_rj = _load_dbs(cfg, vocab)
        model = _load_checked_model(cfg, vocab)
        report = evaluate(model, prepare_examples(scenes, db_rp, db_rj, vocab), vocab)
    _ensure_parent(cfg.metrics)
    write_json(cfg.metrics, report)
    print(" ".join(f"{k}={report[k]:.4f}" for k in ("R@20", "R@50", "R@100", "mR@20", "mR@50", "mR@100")))
    return EXIT_OK


def cmd_predict(cfg: RunConfig, args) -> int:
    vocab = cfg.load_vocabulary()
    scene_path = Path(args.scene)
    if not (scene_path / "manifest.json").is_file():
        raise CommandError(EXIT_DATA, f"{scene_path} is not a scene directory")
    scene = load_scene(scene_path, vocab)
    db_rp, db_rj = _load_dbs(cfg, vocab)
    model = _load_checked_model(cfg, vocab)
    preds, _ = predict_scene(model, prepare_examples([scene], db_rp, db_rj, vocab)[0])
    if args.top is not None:
        preds = preds[:args.top]
    names = vocab.object_names
    rows = [{**p.to_json(), "subject_name": names[scene.categories[p.subject]],
             "object_name": names[scene.categories[p.object]], "relation_name": vocab.relation_names[p.relation]}
            for p in preds]
    _ensure_parent(cfg.predictions)
    write_json(cfg.predictions, {"scenes": {scene_path.name: rows}})
    print(f"wrote {len(rows)} ranked triplets to {cfg.predictions}")
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    results = run_suite(seed=cfg.seed, max_coords=args.max_coords)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'} {r.name} max_rel_error={r.max_rel_error:.3e} coords={r.checked}")
    failed = [r.name for r in results if not r.ok]
    if failed:
        raise CommandError(EXIT_VERIFY, f"gradient check failed for {', '.join(failed)}")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vlprompt", description="Vision-language prompted relation prediction.")
    parser.add_argument("--version", action="version", version=f"vlprompt {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, func, help_text, overrides):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="JSON run configuration; flags override its fields")
        p.add_argument("--seed", type=int, help="run seed (config: seed)")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        p.set_defaults(func=func, overrides={"seed": "seed", **overrides})
        return p

    p = command("gen-prompts", cmd_gen_prompts, "Print the dialogue that would be sent to the LLM.",
                {"vocab": "vocabulary", "llama": "llama"})
    p.add_argument("--vocab", help="vocabulary JSON (config: vocabulary); defaults to the bundled demo one")
    p.add_argument("--sub", required=True, help="subject category name")
    p.add_argument("--obj", required=True, help="object category name")
    p.add_argument("--rel", help="relation name; renders the judger dialogue instead of the proposer one")
    p.add_argument("--llama", action="store_true", default=None, help="use the system-then-user turn layout")

    p = command("synth", cmd_synth, "Write seeded synthetic scenes, their vocabulary and mock knowledge.",
                {"out": "scene_dir", "num_scenes": "synth.num_scenes", "first_seed": "synth.first_seed"})
    p.add_argument("--out", help="output scene directory (config: scene_dir)")
    p.add_argument("--num-scenes", type=int, help="number of scenes (config: synth.num_scenes)")
    p.add_argument("--first-seed", type=int, help="seed of the first scene (config: synth.first_seed)")

    p = command("build-db", cmd_build_db, "Build or resume the RP and RJ feature databases.",
                {"vocab": "vocabulary", "db_rp": "db_rp", "db_rj": "db_rj", "mode": "mode", "jobs": "jobs",
                 "rate_limit": "rate_limit", "knowledge": "knowledge", "llama": "llama",
                 "same_category": "same_category"})
    p.add_argument("--vocab", help="vocabulary JSON (config: vocabulary)")
    p.add_argument("--db-rp", help="RP database path (config: db_rp)")
    p.add_argument("--db-rj", help="RJ database path (config: db_rj)")
    p.add_argument("--kind", choices=("rp", "rj", "both"), default="both", help="which database to build")
    p.add_argument("--mode", choices=("mock", "remote"), help="backend mode (config: mode)")
    p.add_argument("--jobs", type=int, help="concurrent backend requests (config: jobs)")
    p.add_argument("--rate-limit", type=float, help="maximum requests per second (config: rate_limit)")
    p.add_argument("--knowledge", help="mock-mode relation knowledge JSON (config: knowledge)")
    p.add_argument("--llama", action="store_true", default=None, help="system-then-user turn layout")
    p.add_argument("--same-category", action="store_true", default=None,
                   help="also build keys pairing a category with itself (config: same_category)")

    train_flags = {"scenes": "scene_dir", "db_rp": "db_rp", "db_rj": "db_rj", "checkpoint": "checkpoint",
                   "vocab": "vocabulary"}
    p = command("train", cmd_train, "Train the relation model; writes a checkpoint and a per-step log.",
                {**train_flags, "steps": "train.steps", "lr": "train.lr", "batch_size": "train.batch_size",
                 "log": "train_log"})
    for flag in ("scenes", "db-rp", "db-rj", "checkpoint", "vocab"):
        p.add_argument(f"--{flag}", help=f"override config field {train_flags[flag.replace('-', '_')]}")
    p.add_argument("--steps", type=int, help="optimizer steps (config: train.steps)")
    p.add_argument("--lr", type=float, help="base learning rate (config: train.lr)")
    p.add_argument("--batch-size", type=int, help="scenes per step (config: train.batch_size)")
    p.add_argument("--log", help="training log path (config: train_log)")

    p = command("eval", cmd_eval, "Score a checkpoint (or a predictions file) with R@K and mR@K.",
                {**train_flags, "out": "metrics"})
    for flag in ("scenes", "db-rp", "db-rj", "checkpoint", "vocab"):
        p.add_argument(f"--{flag}", help=f"override config field {train_flags[flag.replace('-', '_')]}")
    p.add_argument("--out", help="metrics report path (config: metrics)")
    p.add_argument("--predictions", help="score this predictions JSON instead of running a checkpoint")

    p = command("predict", cmd_predict, "Rank every triplet of one scene.",
                {"db_rp": "db_rp", "db_rj": "db_rj", "checkpoint": "checkpoint", "vocab": "vocabulary",
                 "out": "predictions"})
    p.add_argument("--scene", required=True, help="scene directory")
    for flag in ("db-rp", "db-rj", "checkpoint", "vocab"):
        p.add_argument(f"--{flag}", help="override the config field of the same name")
    p.add_argument("--out", help="predictions JSON path (config: predictions)")
    p.add_argument("--top", type=int, help="keep only the best N triplets")

    p = command("gradcheck", cmd_gradcheck, "Run the finite-difference gradient suite.", {})
    p.add_argument("--max-coords", type=int, default=12, help="elements probed per module tensor")
    return parser


def _classify(exc: BaseException) -> int:
    if isinstance(exc, CommandError):
        return exc.code
    if isinstance(exc, (BackendError, IncompleteBuildError)):
        return EXIT_BACKEND
    if isinstance(exc, (ConfigError, SynthError)):
        return EXIT_CONFIG
    if isinstance(exc, (SceneError, VocabularyError, FeatureDBError, CheckpointError, FileNotFoundError,
                        json.JSONDecodeError, KeyError)):
        return EXIT_DATA
    return 1


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = load_config(args.config)
        _override(cfg, args, args.overrides)
        cfg.validate()
        return args.func(cfg, args)
    except SystemExit as e:  # --help and --version
        return int(e.code or 0)
    except Exception as e:
        code = _classify(e)
        if code == 1:
            raise
        message = " ".join(str(e).split())
        print(f"error code={code} kind={_KINDS[code]}: {message}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
