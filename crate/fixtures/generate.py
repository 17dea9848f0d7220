"""Regenerates the small corpus used by the CLI tests and README examples.

    python3 fixtures/generate.py
"""

import json
import random
from pathlib import Path

OUT = Path(__file__).resolve().parent
rng = random.Random(20181018)

NAMES = ["Anna", "Ben", "Carla", "David", "Emma", "Frank"]
PLACES = ["store", "market", "bakery", "library", "park", "beach", "kitchen", "garden"]
ITEMS = {
    "store": ["milk", "eggs", "soap"],
    "market": ["apples", "fish", "cheese"],
    "bakery": ["bread", "cake", "cookies"],
    "library": ["book", "magazine", "map"],
    "park": ["ball", "kite", "frisbee"],
    "beach": ["towel", "umbrella", "sunscreen"],
    "kitchen": ["pan", "knife", "spoon"],
    "garden": ["seeds", "shovel", "hose"],
}
CARRY = ["bag", "basket", "box", "backpack"]
TIMES = ["morning", "afternoon", "evening"]

POS = {
    "went": "VBD", "to": "TO", "the": "DT", "in": "IN", "and": "CC", "bought": "VBD",
    "some": "DT", "put": "VBD", "them": "PRP", "a": "DT", ".": ".", "?": ".",
    "What": "WP", "Where": "WRB", "did": "VBD", "buy": "VB", "go": "VB",
    "carry": "VB", "things": "NNS", "When": "WRB", "It": "PRP", "was": "VBD",
    "she": "PRP", "he": "PRP", "they": "PRP", "home": "NN", "walked": "VBD",
    "at": "IN", "use": "VB", "to": "TO", "get": "VB",
}


def tok(word):
    if word in NAMES:
        return [word, "NNP", "PERSON"]
    if word in TIMES:
        return [word, "NN", "TIME"]
    return [word, POS.get(word, "NN"), "O"]


def seq(text):
    return [tok(w) for w in text.split()]


def story(gid):
    name = rng.choice(NAMES)
    place = rng.choice(PLACES)
    item = rng.choice(ITEMS[place])
    carry = rng.choice(CARRY)
    time = rng.choice(TIMES)
    passage = (
        f"It was the {time} . {name} went to the {place} and bought some {item} . "
        f"{name} put them in a {carry} and walked home ."
    )
    questions = [
        ("What did " + name + " buy ?", item,
         rng.choice([i for p in PLACES if p != place for i in ITEMS[p]])),
        ("Where did " + name + " go ?", f"the {place}",
         "the " + rng.choice([p for p in PLACES if p != place])),
        (f"What did {name} use to carry the things ?", f"a {carry}",
         "a " + rng.choice([c for c in CARRY if c != carry])),
    ]
    q, right, wrong = rng.choice(questions)
    cands = [(right, 1), (wrong, 0)]
    rng.shuffle(cands)
    return [
        {
            "group_id": gid,
            "example_id": f"{gid}-{i}",
            "passage": seq(passage),
            "question": seq(q),
            "answer": seq(ans),
            "label": label,
        }
        for i, (ans, label) in enumerate(cands)
    ]


def write_jsonl(name, groups, labeled=True):
    with open(OUT / name, "w") as f:
        for g in groups:
            for ex in g:
                if not labeled:
                    ex = {k: v for k, v in ex.items() if k != "label"}
                f.write(json.dumps(ex) + "\n")


train = [story(f"train-{i}") for i in range(24)]
dev = [story(f"dev-{i}") for i in range(10)]
pretrain = [story(f"pre-{i}") for i in range(12)]
write_jsonl("train.jsonl", train)
write_jsonl("dev.jsonl", dev)
write_jsonl("pretrain.jsonl", pretrain)
write_jsonl("unlabeled.jsonl", dev, labeled=False)

words = sorted({t[0] for g in train + dev + pretrain for ex in g
                for part in ("passage", "question", "answer") for t in ex[part]})

with open(OUT / "conceptnet.tsv", "w") as f:
    for place, items in ITEMS.items():
        for item in items:
            f.write(f"AtLocation\t{item}\t{place}\n")
    for c in CARRY:
        f.write(f"UsedFor\t{c}\tcarry\n")
    f.write("RelatedTo\tbuy\tbought\n")
    f.write("RelatedTo\tgo\twent\n")
    f.write("Antonym\tmorning\tevening\n")

with open(OUT / "freq.tsv", "w") as f:
    for w in words:
        f.write(f"{w.lower()}\t{rng.randint(1, 5000)}\n")

with open(OUT / "stopwords.txt", "w") as f:
    f.write("\n".join(["the", "a", "to", "and", "in", "it", "was", "did", "them", "some", ".", "?"]) + "\n")

with open(OUT / "embeddings.txt", "w") as f:
    for w in words:
        if w in NAMES:
            continue
        vec = " ".join(f"{rng.gauss(0, 0.3):.4f}" for _ in range(300))
        f.write(f"{w.lower()} {vec}\n")
