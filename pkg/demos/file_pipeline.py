"""End-to-end file pipeline: write a corpus, rank, select, score, train.

Everything happens in a temp directory through the same entry points the
`rca` console script uses, so this doubles as a smoke test of the JSONL
formats.
"""

import os
import tempfile

import numpy as np

from rca.cli import main
from rca.io import CaptionToken, InstanceRecord, read_instances, write_instances, write_vocab

rng = np.random.default_rng(5)
d = 8
work = tempfile.mkdtemp(prefix="rca_demo_")
print("working in", work)

vocab = [(f"tag{i:02d}", rng.standard_normal(d)) for i in range(24)]
vocab_path = os.path.join(work, "vocab.jsonl")
write_vocab(vocab_path, vocab, d)

records = []
for i in range(4):
    records.append(
        InstanceRecord(
            image_id=f"img{i}",
            image_embedding=rng.standard_normal(d),
            regions=rng.standard_normal((3, d)),
            caption_tokens=[
                CaptionToken("the", False, rng.standard_normal(d)),
                CaptionToken("thing", True, rng.standard_normal(d)),
            ],
        )
    )
inst_path = os.path.join(work, "instances.jsonl")
write_instances(inst_path, records, d)

print("\n$ rca rank vocab.jsonl instances.jsonl --M 6 --out tagged.jsonl")
tagged_path = os.path.join(work, "tagged.jsonl")
code = main(["rank", vocab_path, inst_path, "--M", "6", "--out", tagged_path])
print("(exit", code, ")")

tagged, _ = read_instances(tagged_path)
print("\nranked tags were attached:", [len(r.tags) for r in tagged], "per image")

print("\n$ rca uasr vocab.jsonl tagged.jsonl")
main(["uasr", vocab_path, tagged_path])

print("\n$ rca loss vocab.jsonl tagged.jsonl --enable_uasr")
main(["loss", vocab_path, tagged_path, "--enable_uasr"])

print("\n$ rca train --steps 20 --n_images 12 --n_concepts 6 --d 8 "
      "--regions_per_image 2 --state_out state.jsonl")
state_path = os.path.join(work, "state.jsonl")
main(["train", "--steps", "20", "--n_images", "12", "--n_concepts", "6",
      "--d", "8", "--regions_per_image", "2", "--state_out", state_path])

print("\n$ rca eval state.jsonl")
main(["eval", state_path])
