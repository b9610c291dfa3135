# %% [markdown]
# # Caption metrics and story verification
#
# BLEU, CIDEr-D and self-retrieval on a handful of captions, then the two
# statistics used to check that story text drifts toward its last sentence.

# %%
import numpy as np

from anticap.eval import Entry, bleu, cider_scores, self_retrieval, verify_monotonic, verify_next_sentence

cands = ["a dog catches a ball", "two kids build a sandcastle", "a man cooks dinner"]
refs = [["a dog is catching a ball"], ["kids building a sandcastle on the beach"], ["a man cooking dinner"]]
for c, r in zip(cands, refs):
    print(f"{c!r}: B-1 {bleu(c, r, 1):.3f}  B-4 {bleu(c, r, 4):.3f}")
print("CIDEr-D per caption:", np.round(cider_scores(cands, refs), 3))

# %% [markdown]
# Clipping: a repeated word earns credit only as often as a reference uses it.

# %%
print(bleu("the the the", ["the cat"], 1))

# %% [markdown]
# Self-retrieval ranks every target against each caption. Here the score is
# word overlap with a short description attached to each target.

# %%
descriptions = {"e0": "dog ball", "e1": "kids sandcastle", "e2": "man dinner"}
entries = [Entry(k, c, r, np.array([i], dtype=float)) for i, (k, c, r) in enumerate(zip(descriptions, cands, refs))]
by_index = {int(e.target[0]): descriptions[e.id] for e in entries}


def overlap(candidate, target):
    return len(set(candidate.split()) & set(by_index[int(target[0])].split()))


print(self_retrieval(entries, overlap, (1, 2, 3)))

# %%
story = Entry("s", sentences=["we went out", "we went to the park", "the dog ran to the park", "the dog ran to the park with a ball"])
print(verify_monotonic([story]))
print(verify_next_sentence([story]))
