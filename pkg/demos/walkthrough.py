"""Build a small dataset, emit instructions, and score ground truth against itself.

Usage: python3 demos/walkthrough.py [output_dir]
"""
import json
import sys
from pathlib import Path

from xraybag.captions import validate_corpus
from xraybag.composer import ProtocolConfig
from xraybag.evaluate import emit_report, evaluate
from xraybag.pipeline import BuildConfig, build_dataset, read_jsonl, stats, write_instructions

TASKS = ("scene", "refer", "grounding", "vqa")


def main(out: Path) -> None:
    protocol = ProtocolConfig(categories=("gun", "pliers", "explosive"), poses=("horizontal", "inclined"),
                              clutter_levels=("Limited", "Heavy"), sublevels=(1, 5, 10),
                              baggage_types=("suitcase",), nonthreat_fraction=0.1,
                              multi_threat_fraction=0.2, image_size=(128, 128), volume_depth=24)
    manifest = read_jsonl(build_dataset(BuildConfig(str(out), protocol)))
    print(json.dumps(stats(manifest), indent=2))
    print("first caption:", manifest[0]["caption"])

    write_instructions(manifest, TASKS, out)
    grounding = read_jsonl(out / "instructions_grounding.jsonl")
    print("first grounded answer:", grounding[0]["conversations"][1]["value"])

    report = validate_corpus(manifest, seed=1)
    print(f"caption check against seed 1: mean ROUGE-L {report.mean:.3f}, {len(report.flagged)} flagged")

    preds = [{"id": r["id"], "task": t, "text": r["conversations"][1]["value"]}
             for t in TASKS for r in read_jsonl(out / f"instructions_{t}.jsonl")]
    keys = {r["id"]: r["answer_key"] for r in read_jsonl(out / "instructions_vqa.jsonl")}
    json_path, md_path = emit_report(evaluate(manifest, preds, TASKS, keys), out / "report")
    print(md_path.read_text())


if __name__ == "__main__":
    main(Path(sys.argv[1] if len(sys.argv) > 1 else "walkthrough_out"))
