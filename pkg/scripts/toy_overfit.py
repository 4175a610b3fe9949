"""Train on 32 synthetic scenes with mock language features and report training-set recall.

Usage: python3 scripts/toy_overfit.py [--steps N] [--lr LR] [--seed S] [--log PATH]
"""
import argparse
import json
import time

from vlprompt.language import MockChat, MockEncoder, build_feature_db
from vlprompt.prompter import ModelConfig, RelationModel
from vlprompt.synth import SynthParams, synth_knowledge, synth_scene, synth_vocabulary
from vlprompt.train import TrainConfig, evaluate, prepare_examples, train


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=1000)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--scenes", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--log", help="per-step JSON lines log")
    args = ap.parse_args()

    params = SynthParams()
    vocab = synth_vocabulary(params.num_categories, params.num_relations)
    scenes = [synth_scene(s, params) for s in range(args.scenes)]
    llm, enc = MockChat(0, synth_knowledge(params, vocab)), MockEncoder(64)
    examples = prepare_examples(scenes, build_feature_db(vocab, llm, enc, "rp"),
                                build_feature_db(vocab, llm, enc, "rj"), vocab)
    milestones = (args.steps // 2, args.steps * 5 // 6)
    cfg = TrainConfig(lr=args.lr, steps=args.steps, milestones=milestones, seed=args.seed)
    model = RelationModel(ModelConfig(num_relations=params.num_relations), seed=args.seed)
    start = time.perf_counter()
    result = train(model, examples, cfg, log_path=args.log)
    report = evaluate(model, examples, vocab)
    summary = {k: report[k] for k in ("R@20", "R@50", "R@100", "mR@20", "mR@50", "mR@100")}
    summary.update(first_loss=result.losses[0], final_loss=result.losses[-1],
                   seconds=round(time.perf_counter() - start, 1))
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
