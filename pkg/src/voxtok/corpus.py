"""Dialogue corpus assembly from tokenized assets.

Each asset yields one text-to-3D, one image-to-3D and one caption record,
and assets with an edit pair add six edit records built from six distinct
templates. Records are written as one JSON object per line.

Token accounting is a proxy: every framed shape block counts 1026 tokens
and text counts one token per whitespace-delimited word. Image references
count zero, since the image encoder is not part of this package.
"""

from __future__ import annotations

import json
import os
import random
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import MissingField, PlaceholderMismatch, TemplateCountMismatch, VoxtokError
from .latent_coder import TokenSequence, load_tokens
from .token_codec import BLOCK_LENGTH, VocabMapping, from_extended, to_extended

TASKS = ("text_to_3d", "image_to_3d", "caption_3d", "edit_3d")
TASK_LABELS = {"text_to_3d": "Text-to-3D", "image_to_3d": "Image-to-3D",
               "caption_3d": "3D-Caption", "edit_3d": "3D-Edit"}
REQUIRED_PLACEHOLDERS = {
    "text_to_3d": ("<prompt>",),
    "image_to_3d": ("<image>",),
    "caption_3d": ("<mesh>",),
    "edit_3d": ("<mesh>", "<instruction>"),
}
TEMPLATES_PER_TASK = 25
EDIT_TEMPLATES_PER_PAIR = 6
# size of the host language model's text vocabulary; shape ids follow it
DEFAULT_BASE_VOCAB = 151665
COUNTING_RULE = "1026 tokens per shape block + whitespace-delimited words of text; images count 0"

_PLACEHOLDER = re.compile(r"<(mesh|prompt|image|instruction)>")


class CorpusWriteError(VoxtokError):
    def __init__(self, index, cause):
        super().__init__(f"record {index}: {cause}")
        self.index = index


@dataclass(frozen=True)
class EditPair:
    target: TokenSequence
    instruction: str


@dataclass(frozen=True)
class AssetRecord:
    asset_id: str
    tokens: TokenSequence
    caption: str = ""
    image_path: str | None = None
    edit: EditPair | None = None


@dataclass(frozen=True)
class DialogueTemplate:
    task: str
    pattern: str
    index: int = 0

    def __post_init__(self):
        if self.task not in REQUIRED_PLACEHOLDERS:
            raise ValueError(f"unknown task {self.task!r}")
        found = sorted(m.group(0) for m in _PLACEHOLDER.finditer(self.pattern))
        if found != sorted(REQUIRED_PLACEHOLDERS[self.task]):
            raise PlaceholderMismatch(
                f"{self.task} template {self.index} has placeholders {found}, "
                f"needs exactly {list(REQUIRED_PLACEHOLDERS[self.task])}")

    def fill(self, values):
        """Split the pattern into segments, substituting placeholder values.

        ``values`` maps placeholder to a segment dict. Empty text pieces
        are dropped.
        """
        out, pos = [], 0
        for m in _PLACEHOLDER.finditer(self.pattern):
            if m.start() > pos:
                out.append({"type": "text", "text": self.pattern[pos:m.start()]})
            out.append(values[m.group(0)])
            pos = m.end()
        if pos < len(self.pattern):
            out.append({"type": "text", "text": self.pattern[pos:]})
        return out


@dataclass(frozen=True)
class DialogueRecord:
    """One conversation. ``messages`` is a list of ``{"role", "content"}``
    where content is a list of text, shape or image segments."""

    task: str
    asset_id: str
    template: int
    messages: list
    token_count: int = None

    def __post_init__(self):
        if self.token_count is None:
            object.__setattr__(self, "token_count", count_tokens(self))

    def to_json(self):
        return json.dumps({"asset_id": self.asset_id, "messages": self.messages, "task": self.task,
                           "template": self.template, "token_count": self.token_count},
                          sort_keys=True, separators=(",", ":"), ensure_ascii=False)

    @classmethod
    def from_json(cls, line):
        d = json.loads(line)
        return cls(d["task"], d["asset_id"], d["template"], d["messages"], d["token_count"])

    def shape_blocks(self):
        return [seg["ids"] for msg in self.messages for seg in msg["content"] if seg["type"] == "shape"]


def count_tokens(record):
    """Shape blocks count 1026 each, text counts its words, images nothing."""
    n = 0
    for msg in record.messages:
        for seg in msg["content"]:
            if seg["type"] == "shape":
                n += BLOCK_LENGTH
            elif seg["type"] == "text":
                n += len(seg["text"].split())
    return n


def _default_templates_path():
    return resources.files("voxtok") / "data" / "templates.json"


def edit_prompt_catalog():
    """Editing-instruction catalog: list of ``{"id", "category", "prompts"}``."""
    with (resources.files("voxtok") / "data" / "edit_prompts.json").open("r", encoding="utf-8") as fh:
        return json.load(fh)


def load_templates(task, path=None):
    """Validated templates for ``task`` from a JSON ``{task: [pattern, ...]}`` file.

    Raises
    ------
    TemplateCountMismatch
        If the task does not have exactly 25 templates.
    PlaceholderMismatch
        If a pattern lacks a required placeholder or has an extra one.
    """
    src = _default_templates_path() if path is None else Path(path)
    with src.open("r", encoding="utf-8") as fh:
        table = json.load(fh)
    patterns = table.get(task, [])
    if len(patterns) != TEMPLATES_PER_TASK:
        raise TemplateCountMismatch(f"{task}: expected {TEMPLATES_PER_TASK} templates, found {len(patterns)}")
    return [DialogueTemplate(task, p, i) for i, p in enumerate(patterns)]


def _shape(tokens, mapping):
    return {"type": "shape", "ids": to_extended(tokens, mapping)}


def _text(s):
    return [{"type": "text", "text": s}]


def assemble(asset, task, seed, mapping, templates=None):
    """Dialogue records for one asset and task.

    The template choice depends only on ``(seed, asset_id, task)``, so the
    output does not change with the position of the asset in a batch.
    """
    templates = load_templates(task) if templates is None else templates
    rng = random.Random(f"{seed}:{asset.asset_id}:{task}")
    if task in ("text_to_3d", "caption_3d") and not asset.caption:
        raise MissingField(f"asset {asset.asset_id}: {task} needs a caption")
    if task == "image_to_3d" and not asset.image_path:
        raise MissingField(f"asset {asset.asset_id}: image_to_3d needs an image path")
    if task == "edit_3d" and asset.edit is None:
        raise MissingField(f"asset {asset.asset_id}: edit_3d needs an edit pair")

    if task == "edit_3d":
        chosen = rng.sample(templates, EDIT_TEMPLATES_PER_PAIR)
    else:
        chosen = [rng.choice(templates)]

    out = []
    for t in chosen:
        if task == "text_to_3d":
            user = t.fill({"<prompt>": {"type": "text", "text": asset.caption}})
            reply = [_shape(asset.tokens, mapping)]
        elif task == "image_to_3d":
            user = t.fill({"<image>": {"type": "image", "path": asset.image_path}})
            reply = [_shape(asset.tokens, mapping)]
        elif task == "caption_3d":
            user = t.fill({"<mesh>": _shape(asset.tokens, mapping)})
            reply = _text(asset.caption)
        else:
            user = t.fill({"<mesh>": _shape(asset.tokens, mapping),
                           "<instruction>": {"type": "text", "text": asset.edit.instruction}})
            reply = [_shape(asset.edit.target, mapping)]
        messages = [{"role": "user", "content": user}, {"role": "assistant", "content": reply}]
        out.append(DialogueRecord(task, asset.asset_id, t.index, messages))
    return out


@dataclass
class CorpusStats:
    items: dict = field(default_factory=lambda: dict.fromkeys(TASKS, 0))
    tokens: dict = field(default_factory=lambda: dict.fromkeys(TASKS, 0))
    text_only_items: int = 0
    text_only_tokens: int = 0

    def add(self, record):
        if record.task in self.items:
            self.items[record.task] += 1
            self.tokens[record.task] += record.token_count
        else:
            self.text_only_items += 1
            self.text_only_tokens += record.token_count

    @property
    def total_items(self):
        return sum(self.items.values())

    @property
    def total_tokens(self):
        return sum(self.tokens.values())

    def to_dict(self):
        return {"items": dict(self.items), "tokens": dict(self.tokens),
                "total_items": self.total_items, "total_tokens": self.total_tokens,
                "text_only_items": self.text_only_items, "text_only_tokens": self.text_only_tokens,
                "counting_rule": COUNTING_RULE}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def format_table(self):
        cols = [TASK_LABELS[t] for t in TASKS] + ["3D-All"]
        width = max(12, *(len(c) for c in cols))
        lines = [" " * 12 + "".join(f"{c:>{width + 2}}" for c in cols)]
        for label, src, total in (("Token count", self.tokens, self.total_tokens),
                                  ("Item count", self.items, self.total_items)):
            vals = [src[t] for t in TASKS] + [total]
            lines.append(f"{label:<12}" + "".join(f"{v:>{width + 2}d}" for v in vals))
        return "\n".join(lines) + "\n"


def _interleave(records, text_records, ratio):
    """Yield 3D records with ``ratio`` text-only records per 3D record on average."""
    emitted = 0
    text_iter = iter(text_records)
    for i, rec in enumerate(records):
        yield rec
        while emitted < int((i + 1) * ratio):
            nxt = next(text_iter, None)
            if nxt is None:
                ratio = 0.0
                break
            emitted += 1
            yield nxt


def text_record(messages, source_id=""):
    """Wrap a text-only conversation (list of ``{"role", "content": str}``)."""
    msgs = [{"role": m["role"], "content": _text(m["content"])} for m in messages]
    return DialogueRecord("text", str(source_id), -1, msgs)


def build_corpus(assets, out_path, seed=0, tasks=TASKS, mapping=None, templates_path=None,
                 text_records=(), text_ratio=0.0):
    """Assemble every record for ``assets`` and stream them to ``out_path``.

    Tasks run per asset in ``tasks`` order; the edit task is applied only to
    assets with an edit pair. Optional text-only records are passed through,
    interleaved at ``text_ratio`` per 3D record.

    Returns
    -------
    CorpusStats
    """
    assets = list(assets)
    if not assets:
        raise VoxtokError("no assets")
    mapping = mapping or VocabMapping(DEFAULT_BASE_VOCAB)
    templates = {t: load_templates(t, templates_path) for t in tasks}

    def records():
        for asset in assets:
            for task in tasks:
                if task == "edit_3d" and asset.edit is None:
                    continue
                yield from assemble(asset, task, seed, mapping, templates[task])

    stats = CorpusStats()
    tmp = f"{out_path}.tmp{os.getpid()}"
    index = -1
    try:
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            for index, rec in enumerate(_interleave(records(), text_records, text_ratio)):
                fh.write(rec.to_json() + "\n")
                stats.add(rec)
        os.replace(tmp, out_path)
    except OSError as exc:
        raise CorpusWriteError(index + 1, exc) from exc
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)

    n_edit = sum(a.edit is not None for a in assets)
    expected = {t: len(assets) for t in tasks}
    if "edit_3d" in tasks:
        expected["edit_3d"] = EDIT_TEMPLATES_PER_PAIR * n_edit
    actual = {t: stats.items[t] for t in tasks}
    if actual != expected:
        raise VoxtokError(f"item counts {actual} do not match expected {expected}")
    return stats


def read_corpus(path):
    with open(path, "r", encoding="utf-8") as fh:
        return [DialogueRecord.from_json(line) for line in fh if line.strip()]


def recompute_stats(path, mapping=None):
    """Stats recomputed from a written corpus, validating every shape block."""
    mapping = mapping or VocabMapping(DEFAULT_BASE_VOCAB)
    stats = CorpusStats()
    for i, rec in enumerate(read_corpus(path)):
        for ids in rec.shape_blocks():
            from_extended(ids, mapping)
        if count_tokens(rec) != rec.token_count:
            raise VoxtokError(f"record {i}: stored token count {rec.token_count} != {count_tokens(rec)}")
        stats.add(rec)
    return stats


def save_stats(stats, prefix):
    """Write ``<prefix>.txt`` (table) and ``<prefix>.json``."""
    for suffix, text in ((".txt", stats.format_table()), (".json", stats.to_json())):
        tmp = f"{prefix}{suffix}.tmp{os.getpid()}"
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, f"{prefix}{suffix}")


def load_manifest(path):
    """Assets from a JSON-lines manifest.

    Each line has ``asset_id``, ``tokens`` (token file), ``caption`` and
    optionally ``image`` and ``edit`` (``{"target": token file,
    "instruction": text}``). Relative paths resolve against the manifest's
    directory.
    """
    base = Path(path).parent
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            d = json.loads(line)
            for key in ("asset_id", "tokens"):
                if key not in d:
                    raise MissingField(f"manifest line {line_no}: missing {key!r}")
            edit = None
            if d.get("edit"):
                e = d["edit"]
                if "target" not in e or "instruction" not in e:
                    raise MissingField(f"manifest line {line_no}: edit needs target and instruction")
                edit = EditPair(load_tokens(base / e["target"]), e["instruction"])
            out.append(AssetRecord(str(d["asset_id"]), load_tokens(base / d["tokens"]),
                                   d.get("caption", ""), d.get("image"), edit))
    return out
