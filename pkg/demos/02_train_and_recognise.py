"""
Regressing label vectors from features
======================================

Synthetic features stand in for a video backbone.  We train one regressor
per labelling scheme and score it with the overlap accuracy, which asks how
many of the top-ranked predicted verbs are relevant.
"""

import json
from pathlib import Path

from verbspace import (
    SyntheticSpec, TrainConfig, VerbVocabulary, attach_labels, feature_matrix, forward,
    generate_synthetic, overlap_accuracy, stratified_folds, train,
)

spec_path = Path(__file__).resolve().parent.parent / "configs" / "multiverb_noisy.json"
spec_json = json.loads(spec_path.read_text())
spec = SyntheticSpec.from_dict(spec_json)
instances, votes = generate_synthetic(spec)

vocab = VerbVocabulary(tuple(spec_json["vocabulary"]))
print(f"{len(instances)} videos, {len(vocab)} verbs, feature dim {spec.feature_dim}")

# hold out one fold of a stratified split
folds = stratified_folds(instances, 5, seed=0)
train_ids, test_ids = folds.split(0)
held_out = set(test_ids)
train_set = [i for i in instances if i.video_id not in held_out]
test_set = [i for i in instances if i.video_id in held_out]

# every scheme is scored against the soft labels, which carry the full verb ranking
truth = [lab for _, lab in attach_labels(test_set, votes, vocab, "SAML")]
for scheme in ("SL", "ML", "SAML"):
    pairs = attach_labels(train_set, votes, vocab, scheme)
    params = train(pairs, TrainConfig(epochs=100, seed=1))
    pred = forward(params, feature_matrix(test_set))
    scores = [overlap_accuracy(truth, pred, a) for a in (0.3, 0.5)]
    print(f"{scheme:5s} A(0.3) = {scores[0]:.3f}   A(0.5) = {scores[1]:.3f}")
