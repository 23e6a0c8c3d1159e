"""Scoring of model outputs: label sets, grounded boxes and multiple-choice answers."""
from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import IdMismatch, IoFailure, ParseError
from .instruct import LETTERS, NormBox, VQA_CATEGORIES, scan_box_values
from .scene import VOCABULARY, ThreatCategory

UNPARSED = "unparsed"
THRESHOLDS = (0.5, 0.25)
GROUNDING_SPLITS = ("single_object", "multi_object", "referring", "overall")

# alternative surface forms -> vocabulary label
ALIASES = {
    "plier": "pliers", "plier tool": "pliers",
    "pistol": "gun", "firearm": "gun", "firearms": "gun",
    "3d printed firearm": "3D printed gun", "printed plastic gun": "3D printed gun",
    "printed gun": "3D printed gun",
    "power bank": "powerbank", "power banks": "powerbank",
    "other sharp item": "other sharp items", "sharp item": "other sharp items",
    "sharp items": "other sharp items", "sharp object": "other sharp items",
    "sharp objects": "other sharp items", "pointed tool": "other sharp items",
    "razor": "shaving razor", "razors": "shaving razor",
    "spanner": "wrench", "spanners": "wrench",
    "cartridge": "bullet", "cartridges": "bullet", "live round": "bullet", "ammunition": "bullet",
    "nail clipper": "nail cutter", "nail clippers": "nail cutter",
    "scissor": "scissors",
    "handcuff": "handcuffs",
    "screw driver": "screwdriver",
    "injection": "syringe",
    "improvised explosive device": "explosive", "ied": "explosive",
    "non threat": "nonthreat",
}
_IRREGULAR_PLURALS = {"knife": "knives", "battery": "batteries", "wrench": "wrenches"}


def _normalize(text: str) -> str:
    return re.sub(r"\s+", " ", text.lower().replace("-", " ").replace("_", " ")).strip()


def _term_table(vocab: Sequence[str]) -> dict[str, str]:
    table = {}
    for label in vocab:
        key = _normalize(label)
        table[key] = label
        if not key.endswith("s"):
            table[_IRREGULAR_PLURALS.get(key, key + "s")] = label
    by_norm = {_normalize(l): l for l in vocab}
    for alias, target in ALIASES.items():
        if _normalize(target) in by_norm:
            table.setdefault(_normalize(alias), by_norm[_normalize(target)])
    return table


_MATCHERS: dict = {}


def _matcher(vocab: Sequence[str]):
    key = tuple(vocab)
    if key not in _MATCHERS:
        table = _term_table(vocab)
        terms = sorted(table, key=lambda t: (-len(t), t))
        pattern = re.compile(r"\b(?:" + "|".join(re.escape(t) for t in terms) + r")\b")
        _MATCHERS[key] = (pattern, table)
    return _MATCHERS[key]


def find_labels(text: str, vocab: Sequence[str] = VOCABULARY) -> list[str]:
    """Vocabulary labels mentioned in ``text``, in order of first mention."""
    pattern, table = _matcher(vocab)
    out = []
    for m in pattern.finditer(_normalize(text)):
        label = table[m.group(0)]
        if label not in out:
            out.append(label)
    return out


def parse_labels(text: str, vocab: Sequence[str] = VOCABULARY) -> frozenset:
    """Label set named in free text; ``{"unparsed"}`` when nothing matches."""
    found = find_labels(text, vocab)
    return frozenset(found) if found else frozenset({UNPARSED})


def phrase_category(phrase: str) -> Optional[str]:
    """Category value named by a grounded phrase, or None."""
    found = find_labels(phrase)
    if not found:
        return None
    return next(c.value for c in ThreatCategory if c.label == found[0])


# -- scene comprehension ---------------------------------------------------


def _f1(tp: int, fp: int, fn: int) -> float:
    d = 2 * tp + fp + fn
    return 2 * tp / d if d else 0.0


def average_precision(scores: Sequence[float], relevant: Sequence[bool]) -> float:
    """Non-interpolated AP of a ranking; ties keep input order."""
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    hits, total = 0, 0.0
    for rank, i in enumerate(order, 1):
        if relevant[i]:
            hits += 1
            total += hits / rank
    n_rel = sum(bool(r) for r in relevant)
    return total / n_rel if n_rel else 0.0


def score_multilabel(preds: Mapping[str, Iterable[str]], gts: Mapping[str, Iterable[str]],
                     vocab: Sequence[str] = VOCABULARY,
                     confidences: Optional[Mapping[str, Mapping[str, float]]] = None) -> dict:
    """Micro/macro F1 and mAP over (image, class) decisions.

    Images missing from ``preds`` count as predicting nothing. Without
    confidences each class's AP is its precision at the single operating
    point; ``map_mode`` in the result says which applied.
    """
    unknown = set(preds) - set(gts)
    if unknown:
        raise IdMismatch(unknown)
    ids = sorted(gts)
    if not ids:
        return {"micro_f1": None, "macro_f1": None, "map": None, "map_mode": "none"}
    vocab = list(vocab)
    P = np.zeros((len(ids), len(vocab)), dtype=bool)
    G = np.zeros_like(P)
    col = {v: j for j, v in enumerate(vocab)}
    for i, k in enumerate(ids):
        for label in gts[k]:
            G[i, col[label]] = True
        for label in preds.get(k, ()):
            if label in col:
                P[i, col[label]] = True
    tp = (P & G).sum(axis=0)
    fp = (P & ~G).sum(axis=0)
    fn = (~P & G).sum(axis=0)
    micro = _f1(int(tp.sum()), int(fp.sum()), int(fn.sum()))
    active = [j for j in range(len(vocab)) if G[:, j].any() or P[:, j].any()]
    macro = float(np.mean([_f1(tp[j], fp[j], fn[j]) for j in active])) if active else 0.0
    gt_classes = [j for j in range(len(vocab)) if G[:, j].any()]
    if confidences:
        aps = []
        for j in gt_classes:
            scores = [float(confidences.get(k, {}).get(vocab[j], 1.0 if P[i, j] else 0.0))
                      for i, k in enumerate(ids)]
            aps.append(average_precision(scores, G[:, j]))
        mode = "ranked"
    else:
        aps = [tp[j] / (tp[j] + fp[j]) if tp[j] + fp[j] else 0.0 for j in gt_classes]
        mode = "single_point_precision"
    return {"micro_f1": float(micro), "macro_f1": macro,
            "map": float(np.mean(aps)) if aps else 0.0, "map_mode": mode}


# -- boxes -----------------------------------------------------------------


def iou(a, b) -> float:
    """Intersection over union with half-open extents (width = x_max - x_min).

    Identical boxes score 1 even when degenerate.
    """
    a = a.as_tuple() if isinstance(a, NormBox) else tuple(a)
    b = b.as_tuple() if isinstance(b, NormBox) else tuple(b)
    if a == b:
        return 1.0
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    inter = max(0, iw) * max(0, ih)
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


@dataclass
class GroundedParse:
    items: list[tuple[str, NormBox]] = field(default_factory=list)
    malformed: int = 0
    clamped: int = 0


def _box_from_values(values) -> Optional[tuple[NormBox, bool]]:
    clamped = any(v > 100 for v in values)
    vals = [min(100, v) for v in values]
    if vals[0] > vals[2] or vals[1] > vals[3]:
        return None
    return NormBox(*vals), clamped


def parse_grounded(text: str) -> GroundedParse:
    """``<p>phrase</p> {box}`` pairs in order; bad groups are skipped and counted."""
    out = GroundedParse()
    pos = 0
    while True:
        start = text.find("<p>", pos)
        if start < 0:
            return out
        close = text.find("</p>", start + 3)
        if close < 0:
            out.malformed += 1
            return out
        phrase = text[start + 3:close].strip()
        i = close + 4
        while i < len(text) and text[i] == " ":
            i += 1
        pos = i
        try:
            values, end = scan_box_values(text, i)
        except ParseError:
            out.malformed += 1
            continue
        pos = end
        parsed = _box_from_values(values)
        if parsed is None:
            out.malformed += 1
            continue
        box, clamped = parsed
        out.clamped += clamped
        out.items.append((phrase, box))


def parse_boxes(text: str) -> GroundedParse:
    """Every box group in ``text`` (phrase left empty)."""
    out = GroundedParse()
    for m in re.finditer(r"\{", text):
        if not text.startswith("{<", m.start()):
            continue
        try:
            values, _ = scan_box_values(text, m.start())
        except ParseError:
            out.malformed += 1
            continue
        parsed = _box_from_values(values)
        if parsed is None:
            out.malformed += 1
            continue
        out.clamped += parsed[1]
        out.items.append(("", parsed[0]))
    return out


def match_instances(preds: Sequence[tuple[Optional[str], NormBox]],
                    gts: Sequence[tuple[str, NormBox]]) -> list[float]:
    """Greedy one-to-one matching; IoU of each gt's match (0.0 if unmatched).

    Candidate pairs need equal categories. Pairs are taken by IoU descending,
    then gt index, then prediction index.
    """
    pairs = []
    for gi, (gcat, gbox) in enumerate(gts):
        for pi, (pcat, pbox) in enumerate(preds):
            if pcat == gcat:
                v = iou(pbox, gbox)
                if v > 0:
                    pairs.append((-v, gi, pi))
    pairs.sort()
    result = [0.0] * len(gts)
    used_g, used_p = set(), set()
    for neg, gi, pi in pairs:
        if gi in used_g or pi in used_p:
            continue
        used_g.add(gi)
        used_p.add(pi)
        result[gi] = -neg
    return result


def grounding_acc(preds: Mapping[str, Sequence], gts: Mapping[str, Sequence], tau: float) -> Optional[float]:
    """Fraction of gt instances matched with IoU >= tau; None with no instances."""
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    hits = total = 0
    for k, g in gts.items():
        ious = match_instances(preds.get(k, ()), g)
        hits += sum(v >= tau for v in ious)
        total += len(g)
    return hits / total if total else None


# -- VQA -------------------------------------------------------------------

_LETTER = re.compile(r"(?<![A-Za-z0-9])([A-D])(?![A-Za-z0-9])")


def extract_letter(response: str, options: Sequence[str]) -> Optional[str]:
    """Answer letter of a response, or None when absent or ambiguous.

    A single distinct standalone letter wins; several mean the response
    hedged. With no letter, a response quoting exactly one option's text
    selects it.
    """
    valid = LETTERS[:len(options)]
    letters = {m.group(1) for m in _LETTER.finditer(response)}
    letters &= set(valid)
    if len(letters) == 1:
        return letters.pop()
    if letters:
        return None
    low = response.lower()
    quoted = [valid[i] for i, o in enumerate(options) if o.lower() in low]
    return quoted[0] if len(quoted) == 1 else None


def vqa_score(responses: Mapping[str, str], keys: Mapping[str, Mapping]) -> dict:
    """Per-category and overall accuracy; unparsed answers count as wrong."""
    unknown = set(responses) - set(keys)
    if unknown:
        raise IdMismatch(unknown)
    correct = {c: 0 for c in VQA_CATEGORIES}
    count = {c: 0 for c in VQA_CATEGORIES}
    unparsed = 0
    for k, key in keys.items():
        cat = key["category"]
        count[cat] += 1
        letter = extract_letter(responses.get(k, ""), key["options"])
        if letter is None:
            unparsed += 1
        elif letter == key["letter"]:
            correct[cat] += 1
    total = sum(count.values())
    out = {c: (correct[c] / count[c] if count[c] else None) for c in VQA_CATEGORIES}
    out["overall"] = sum(correct.values()) / total if total else None
    out["count"] = total
    out["unparsed"] = unparsed
    return out


# -- reports ---------------------------------------------------------------


@dataclass
class EvalReport:
    scene: dict = field(default_factory=dict)
    grounding: dict = field(default_factory=dict)
    vqa: dict = field(default_factory=dict)
    parse_failures: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**{k: d.get(k, {}) for k in ("scene", "grounding", "vqa", "parse_failures")})

    def metric_values(self) -> list[float]:
        """Every numeric metric in the report (None entries skipped)."""
        vals = [self.scene.get(k) for k in ("micro_f1", "macro_f1", "map")]
        for split in self.grounding.values():
            vals += [split.get(f"acc@{t}") for t in THRESHOLDS]
        vals += [self.vqa.get(c) for c in VQA_CATEGORIES + ("overall",)]
        return [v for v in vals if v is not None]


def _fmt(v) -> str:
    return "-" if v is None else f"{v:.4f}"


def report_markdown(report: EvalReport) -> str:
    lines = []
    if report.scene:
        lines += ["## Scene comprehension", "", "| micro F1 | macro F1 | mAP |", "|---|---|---|",
                  f"| {_fmt(report.scene.get('micro_f1'))} | {_fmt(report.scene.get('macro_f1'))} "
                  f"| {_fmt(report.scene.get('map'))} |", ""]
        if report.scene.get("map_mode") == "single_point_precision":
            lines += ["mAP computed without confidences: per-class precision at one operating point.", ""]
    if report.grounding:
        lines += ["## Grounding and referring", "", "| split | acc@0.5 | acc@0.25 | instances |",
                  "|---|---|---|---|"]
        for split in GROUNDING_SPLITS:
            s = report.grounding.get(split, {})
            lines.append(f"| {split} | {_fmt(s.get('acc@0.5'))} | {_fmt(s.get('acc@0.25'))} "
                         f"| {s.get('count', 0)} |")
        lines.append("")
    if report.vqa:
        lines += ["## VQA", "", "| " + " | ".join(VQA_CATEGORIES) + " | overall |",
                  "|" + "---|" * (len(VQA_CATEGORIES) + 1),
                  "| " + " | ".join(_fmt(report.vqa.get(c)) for c in VQA_CATEGORIES)
                  + f" | {_fmt(report.vqa.get('overall'))} |", ""]
    if report.parse_failures:
        lines += ["## Parse failures", "", "| counter | value |", "|---|---|"]
        lines += [f"| {k} | {v} |" for k, v in sorted(report.parse_failures.items())]
        lines.append("")
    return "\n".join(lines)


def emit_report(report: EvalReport, out_dir) -> tuple[Path, Path]:
    """Write ``report.json`` and ``report.md`` into ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        jp, mp = out / "report.json", out / "report.md"
        jp.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        mp.write_text(report_markdown(report), encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write report to {out}: {exc}") from exc
    return jp, mp


# -- end-to-end evaluation against a manifest ---------------------------------


def _half_open_norm(record, box):
    from .instruct import inclusive_to_half_open, normalize_box

    w, h = record["image_size"]
    return normalize_box(inclusive_to_half_open(box), w, h)


def ground_truth(manifest: Sequence[dict], vqa_keys: Optional[Mapping[str, Mapping]] = None) -> dict:
    """Per-task ground truth keyed by instruction record id."""
    scene, refer, grounding = {}, {}, {}
    for rec in manifest:
        sid = rec["id"]
        threats = rec["metadata"]["threats"]
        labels = []
        for t in threats:
            lab = ThreatCategory(t["category"]).label
            if lab not in labels:
                labels.append(lab)
        scene[f"{sid}-scene"] = frozenset(labels or [ThreatCategory.NONTHREAT.label])
        inst = [(t["category"], _half_open_norm(rec, b)) for t, b in zip(threats, rec["boxes_px"])]
        grounding[f"{sid}-grounding"] = inst
        for i, g in enumerate(inst):
            refer[f"{sid}-refer-{i}"] = [g]
    return {"scene": scene, "refer": refer, "grounding": grounding, "vqa": dict(vqa_keys or {})}


def evaluate(manifest: Sequence[dict], predictions: Sequence[dict], tasks: Sequence[str],
             vqa_keys: Optional[Mapping[str, Mapping]] = None) -> EvalReport:
    """Score predictions ``{id, task, text, confidences?}`` for the given tasks."""
    gt = ground_truth(manifest, vqa_keys)
    by_task: dict[str, dict] = {t: {} for t in ("scene", "refer", "grounding", "vqa")}
    confs: dict = {}
    for p in predictions:
        task = p.get("task")
        if task not in by_task:
            continue
        by_task[task][p["id"]] = p.get("text", "")
        if p.get("confidences"):
            confs[p["id"]] = p["confidences"]
    for task in tasks:
        unknown = set(by_task[task]) - set(gt[task])
        if unknown:
            raise IdMismatch(unknown)

    report = EvalReport()
    failures = {}
    if "scene" in tasks:
        preds = {k: parse_labels(v) for k, v in by_task["scene"].items()}
        report.scene = score_multilabel(preds, gt["scene"], confidences=confs or None)
        failures["scene_unparsed"] = sum(UNPARSED in s for s in preds.values())
        failures["scene_missing"] = len(set(gt["scene"]) - set(preds))

    if "grounding" in tasks or "refer" in tasks:
        malformed = clamped = 0
        g_preds, g_gts = {}, {}
        if "grounding" in tasks:
            for k, g in gt["grounding"].items():
                parsed = parse_grounded(by_task["grounding"].get(k, ""))
                malformed += parsed.malformed
                clamped += parsed.clamped
                g_preds[k] = [(phrase_category(ph), b) for ph, b in parsed.items]
                g_gts[k] = g
        r_preds, r_gts = {}, {}
        if "refer" in tasks:
            for k, g in gt["refer"].items():
                parsed = parse_boxes(by_task["refer"].get(k, ""))
                malformed += parsed.malformed
                clamped += parsed.clamped
                r_preds[k] = [(g[0][0], b) for _, b in parsed.items]
                r_gts[k] = g
        splits = {
            "single_object": {k: v for k, v in g_gts.items() if len(v) == 1},
            "multi_object": {k: v for k, v in g_gts.items() if len(v) > 1},
            "referring": r_gts,
            "overall": {**g_gts, **r_gts},
        }
        all_preds = {**g_preds, **r_preds}
        for name, split in splits.items():
            entry = {f"acc@{t}": grounding_acc(all_preds, split, t) for t in THRESHOLDS}
            entry["count"] = sum(len(v) for v in split.values())
            report.grounding[name] = entry
        failures["malformed_boxes"] = malformed
        failures["clamped_boxes"] = clamped
        failures["grounding_missing"] = len(set(g_gts) - set(by_task["grounding"]))
        failures["refer_missing"] = len(set(r_gts) - set(by_task["refer"]))

    if "vqa" in tasks:
        report.vqa = vqa_score(by_task["vqa"], gt["vqa"])
        failures["vqa_unparsed"] = report.vqa.pop("unparsed")
    report.parse_failures = failures
    return report
