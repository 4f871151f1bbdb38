"""
Retrieval in both directions
============================

Predicted label vectors live in the same space as verb vertices and
multi-verb queries, so retrieval is just Euclidean ranking.  Video-to-text
ranks verbs for a clip, text-to-video ranks clips for a set of verbs.
"""

import json
from pathlib import Path

from verbspace import (
    QueryVector, SyntheticSpec, TrainConfig, VerbVocabulary, attach_labels, enumerate_queries,
    feature_matrix, forward, generate_synthetic, rank_verbs, t2v_map, train, v2t_map,
)

spec_path = Path(__file__).resolve().parent.parent / "configs" / "separable.json"
spec_json = json.loads(spec_path.read_text())
instances, votes = generate_synthetic(SyntheticSpec.from_dict(spec_json))
vocab = VerbVocabulary(tuple(spec_json["vocabulary"]))

params = train(attach_labels(instances, votes, vocab, "SAML"), TrainConfig(epochs=100))
pred = forward(params, feature_matrix(instances))

# video to text: the closest verb vertices for one clip
print(rank_verbs(pred[0], vocab, query_id=instances[0].video_id).to_tsv())

# text to video: which clips best match "hold" together with "rotate"?
u = QueryVector.from_verbs([vocab.index("hold"), vocab.index("rotate")], len(vocab))
dist = ((pred - u.values) ** 2).sum(axis=1)
best = dist.argsort(kind="stable")[:3]
print("hold+rotate ->", [instances[k].video_id for k in best])

# the same machinery scored as mAP
truth = [lab for _, lab in attach_labels(instances, votes, vocab, "SAML")]
print(f"v2t mAP (SAML >= 0.5): {v2t_map(truth, pred, 0.5).aggregate:.3f}")
for n in (1, 2, 3):
    queries = enumerate_queries(truth, n, 0.5)
    print(f"t2v mAP n={n}: {t2v_map(queries, pred, truth, 0.5).aggregate:.3f} over {len(queries)} queries")
