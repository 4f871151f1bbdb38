"""
Finding the same action in another dataset
==========================================

Each synthetic clip carries a dataset tag.  Using predicted label vectors
as descriptors, we look for the nearest clip that comes from a different
dataset than the query.  The command line equivalent is
``verbspace retrieve --mode v2v --cross-dataset``.
"""

import json
from pathlib import Path

from verbspace import (
    SyntheticSpec, TrainConfig, VerbVocabulary, attach_labels, feature_matrix, forward,
    generate_synthetic, train, v2v_retrieve,
)

spec_path = Path(__file__).resolve().parent.parent / "configs" / "multiverb_noisy.json"
spec_json = json.loads(spec_path.read_text())
instances, votes = generate_synthetic(SyntheticSpec.from_dict(spec_json))
vocab = VerbVocabulary(tuple(spec_json["vocabulary"]))

params = train(attach_labels(instances, votes, vocab, "SAML"), TrainConfig(epochs=100))
pred = forward(params, feature_matrix(instances))

for q in (0, 45, 130):
    query = instances[q]
    rest = [k for k in range(len(instances)) if k != q]
    ranked = v2v_retrieve(
        pred[q], pred[rest], [instances[k].video_id for k in rest],
        [instances[k].dataset_tag for k in rest], exclude_tag=query.dataset_tag,
    )
    top_id, top_dist = ranked.entries[0]
    top = next(i for i in instances if i.video_id == top_id)
    print(f"{query.video_id} ({query.dataset_tag}) -> {top_id} ({top.dataset_tag}), distance {top_dist:.3f}")
