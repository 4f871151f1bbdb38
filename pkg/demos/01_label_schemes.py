"""
Three ways to label an action
=============================

A crowd of annotators describes each action class with free verbs.  From
one vote table we build a single-verb label, a binary multi-verb label and a
soft-assigned label, then look at which verbs count as relevant.
"""

import numpy as np

from verbspace import VerbVocabulary, VoteRecord, build_ml, build_saml, build_sl, relevant_verbs

vocab = VerbVocabulary(("pour", "fill", "hold", "tilt", "open"))

# nine people watched "pour oil"; everyone said pour, most also said fill
votes = VoteRecord("pour-oil", {"pour": 9, "fill": 6, "hold": 3, "tilt": 2}, annotator_count=9)

for label in (build_sl(votes, vocab), build_ml(votes, vocab), build_saml(votes, vocab)):
    print(f"{label.scheme.value:5s}", np.round(label.values, 3))

# SAML keeps an ordering over verbs; the threshold alpha decides how deep
# into that ordering a verb still counts as a correct description
saml = build_saml(votes, vocab)
for alpha in (0.2, 0.3, 0.5, 1.0):
    names = sorted(vocab.verbs[j] for j in relevant_verbs(saml, alpha))
    print(f"alpha >= {alpha}: {names}")
