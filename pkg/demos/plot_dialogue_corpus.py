"""
Building a small dialogue corpus
================================

Assets with tokens, captions, images and edit pairs are turned into
templated user/assistant records. The stats table counts items and
tokens per task.
"""

import tempfile
from pathlib import Path

import numpy as np

from voxtok import corpus
from voxtok.latent_coder import TokenSequence
from voxtok.token_codec import VocabMapping, scan_stream

rng = np.random.default_rng(0)
catalog = corpus.edit_prompt_catalog()
assets = []
for i in range(8):
    tokens = TokenSequence(rng.integers(0, 8192, 1024))
    edit = None
    if i % 2 == 0:
        row = catalog[i]
        edit = corpus.EditPair(TokenSequence(rng.integers(0, 8192, 1024)), row["prompts"][0])
    assets.append(corpus.AssetRecord(f"asset{i}", tokens, f"a small {catalog[i]['category'].lower()}",
                                     f"renders/asset{i}.png", edit))

mapping = VocabMapping(corpus.DEFAULT_BASE_VOCAB)
with tempfile.TemporaryDirectory() as d:
    out = Path(d) / "dialogues.jsonl"
    stats = corpus.build_corpus(assets, out, seed=0, mapping=mapping)
    print(stats.format_table())
    first = corpus.DialogueRecord.from_json(out.read_text().splitlines()[0])

print("task:", first.task, "template", first.template)
for msg in first.messages:
    parts = [s["text"] if s["type"] == "text" else f"<{s['type']}>" for s in msg["content"]]
    print(f"  {msg['role']}: {''.join(parts)}")

# Shape blocks can be recovered from a flat id stream by their sentinels.
stream = [1, 2, 3] + first.shape_blocks()[0] + [4]
print("blocks found in stream:", [b.span for b in scan_stream(stream, mapping)])
