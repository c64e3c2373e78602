"""Synthetic reasoning tasks: five generator families, each paired with an
independent brute-force oracle, plus dataset splitting and JSONL io.

Every sample's target is produced by the family's oracle from the sample's
generation metadata, never by the construction shortcut, so `target ==
oracle(meta)` holds by construction and can be re-verified.  Generation is a
pure function of (seed, count): the same call yields byte-identical samples.

Classification families (syllogism, geometry) label with 0/1; regression
families (sequence, algebra, combinatorics) target integers that stay small
enough for exact float arithmetic.

Dataset files are UTF-8 JSONL, one object per line:
  {"family": ..., "text": ..., "label": 0|1}                  classification
  {"family": ..., "text": ..., "target": number, "meta": {}}  regression
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

from wot.config import CLASSIFICATION_FAMILIES, FAMILIES

# Nonsense plural nouns for syllogisms.  The pool is fixed so a vocabulary
# built from generated data covers held-out questions.
NONSENSE_NOUNS = [
    "bloops", "razzies", "lazzies", "wumps", "glorps", "zonks", "feps",
    "daxes", "blickets", "torles", "quints", "murfs", "snorps", "vexes",
    "plinks", "crullers", "jabbers", "klorns", "mibbles", "tazzles",
]

PERSON_NAMES = [
    "john", "mary", "tom", "alice", "sara", "peter", "linda", "james",
    "emma", "david", "nina", "oscar",
]

ITEM_NOUNS = ["apples", "oranges", "books", "marbles", "pencils", "coins",
              "stickers", "shells"]

# Shape-containment edges: X -> Y means "every X is a Y".
SHAPE_EDGES = [
    ("square", "rectangle"),
    ("rectangle", "parallelogram"),
    ("parallelogram", "quadrilateral"),
    ("quadrilateral", "polygon"),
    ("square", "rhombus"),
    ("rhombus", "parallelogram"),
    ("equilateral triangle", "isosceles triangle"),
    ("isosceles triangle", "triangle"),
    ("triangle", "polygon"),
]
SHAPE_NAMES = sorted({n for e in SHAPE_EDGES for n in e})


@dataclass
class TaskSample:
    """One synthetic problem with its oracle-computed answer."""

    family: str
    text: str
    target: float  # 0/1 for classification families
    meta: dict = field(default_factory=dict)
    seed: int = 0
    index: int = 0

    @property
    def label(self) -> int:
        return int(self.target)


@dataclass
class DatasetSplit:
    train: list[TaskSample]
    val: list[TaskSample]
    test: list[TaskSample]

    def all_samples(self) -> list[TaskSample]:
        return self.train + self.val + self.test


# ---------------------------------------------------------------------------
# oracles: brute-force ground truth, independent of generator shortcuts


def reachable(edges: list, source: str, goal: str) -> bool:
    """Breadth-first reachability in a digraph; reflexive by convention."""
    if source == goal:
        return True
    adj: dict[str, list[str]] = {}
    for a, b in edges:
        adj.setdefault(a, []).append(b)
    frontier, seen = [source], {source}
    while frontier:
        node = frontier.pop()
        for nxt in adj.get(node, ()):
            if nxt == goal:
                return True
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    return False


def syllogism_oracle(meta: dict) -> int:
    """Does the conclusion follow?  Reachability over the premise digraph."""
    prem = [tuple(p) for p in meta["premises"]]
    return int(reachable(prem, meta["query"][0], meta["query"][1]))


def sequence_oracle(meta: dict) -> int:
    """Next term by regenerating the progression one step further."""
    terms = [meta["start"]]
    for _ in range(meta["shown"]):
        if meta["kind"] == "arithmetic":
            terms.append(terms[-1] + meta["step"])
        else:
            terms.append(terms[-1] * meta["ratio"])
    return terms[meta["shown"]]


def algebra_oracle(meta: dict) -> int:
    """Solve x + k*x = total by scanning candidate x values."""
    k, total = meta["k"], meta["total"]
    for x in range(total + 1):
        if x + k * x == total:
            return k * x
    raise ValueError(f"no integer solution for k={k}, total={total}")


def combinatorics_oracle(meta: dict) -> int:
    """Count handshakes by enumerating unordered pairs."""
    n = meta["people"]
    count = 0
    for i in range(n):
        for j in range(i + 1, n):
            count += 1
    return count


def geometry_oracle(meta: dict) -> int:
    """Containment via reachability in the fixed shape hierarchy."""
    return int(reachable(SHAPE_EDGES, meta["x"], meta["y"]))


ORACLES = {
    "syllogism": syllogism_oracle,
    "sequence": sequence_oracle,
    "algebra": algebra_oracle,
    "combinatorics": combinatorics_oracle,
    "geometry": geometry_oracle,
}


# ---------------------------------------------------------------------------
# generators


def _syllogism_text(statements: list, query: tuple) -> str:
    clauses = [f"{'all' if pos else 'no'} {a} are {b}"
               for pos, a, b in statements]
    if len(clauses) == 1:
        head = "If " + clauses[0]
    else:
        head = "If " + ", ".join(clauses[:-1]) + " and " + clauses[-1]
    return f"{head}, are all {query[0]} definitely {query[1]}?"


def gen_syllogism(seed: int, count: int) -> list[TaskSample]:
    """Transitive chains over nonsense nouns, ~50% valid.

    Invalid questions mostly break one chain link by negating that premise
    ("no X are Y"), which removes the edge from the premise digraph and
    makes the conclusion fail; a small share instead reverses the
    conclusion.  The label is always reachability over the positive
    premises.  Reversed conclusions are bag-of-words-identical to valid
    questions, so their share is kept low enough for an order-insensitive
    encoder to have headroom on this family.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = random.Random(f"{seed}:syllogism")
    samples = []
    for index in range(count):
        length = rng.randint(2, 4)
        nouns = rng.sample(NONSENSE_NOUNS, length + 1)
        chain = [(nouns[i], nouns[i + 1]) for i in range(length)]
        mode = rng.choices(("valid", "broken", "reversed"),
                           weights=(0.50, 0.45, 0.05))[0]
        statements = [(True, a, b) for a, b in chain]
        query = (nouns[0], nouns[length])
        if mode == "broken":
            k = rng.randrange(length)
            statements[k] = (False,) + chain[k]
        elif mode == "reversed":
            query = (nouns[length], nouns[0])
        premises = [[a, b] for pos, a, b in statements if pos]
        meta = {"premises": premises, "query": list(query), "mode": mode,
                "statements": [[pos, a, b] for pos, a, b in statements]}
        target = syllogism_oracle(meta)
        samples.append(TaskSample("syllogism",
                                  _syllogism_text(statements, query),
                                  float(target), meta, seed, index))
    return samples


def gen_sequence(seed: int, count: int) -> list[TaskSample]:
    """Arithmetic or geometric progressions; 5 shown terms, target is term 6."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = random.Random(f"{seed}:sequence")
    samples = []
    for index in range(count):
        if rng.random() < 0.5:
            meta = {"kind": "arithmetic", "start": rng.randint(1, 20),
                    "step": rng.randint(-9, 9), "shown": 5}
        else:
            meta = {"kind": "geometric", "start": rng.randint(1, 9),
                    "ratio": rng.choice((2, 3)), "shown": 5}
        terms = [meta["start"]]
        for _ in range(meta["shown"] - 1):
            if meta["kind"] == "arithmetic":
                terms.append(terms[-1] + meta["step"])
            else:
                terms.append(terms[-1] * meta["ratio"])
        target = sequence_oracle(meta)
        text = ("What is the next number in the sequence: "
                + ", ".join(str(t) for t in terms) + ", ...?")
        samples.append(TaskSample("sequence", text, float(target), meta,
                                  seed, index))
    return samples


def gen_algebra(seed: int, count: int) -> list[TaskSample]:
    """"A has k times as many X as B; together T" with integer solutions."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = random.Random(f"{seed}:algebra")
    samples = []
    for index in range(count):
        k = rng.randint(2, 5)
        share = rng.randint(1, 30)
        total = share * (k + 1)
        a, b = rng.sample(PERSON_NAMES, 2)
        item = rng.choice(ITEM_NOUNS)
        meta = {"k": k, "total": total, "a": a, "b": b, "item": item}
        target = algebra_oracle(meta)
        text = (f"{a.capitalize()} has {k} times as many {item} as "
                f"{b.capitalize()}. Together, they have {total} {item}. "
                f"How many {item} does {a.capitalize()} have?")
        samples.append(TaskSample("algebra", text, float(target), meta,
                                  seed, index))
    return samples


def gen_combinatorics(seed: int, count: int) -> list[TaskSample]:
    """Handshake counting over n in 3..20 people."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = random.Random(f"{seed}:combinatorics")
    samples = []
    for index in range(count):
        n = rng.randint(3, 20)
        meta = {"people": n}
        target = combinatorics_oracle(meta)
        text = (f"In a room of {n} people, everyone shakes hands with "
                "everyone else exactly once. How many handshakes are there "
                "in total?")
        samples.append(TaskSample("combinatorics", text, float(target), meta,
                                  seed, index))
    return samples


def _article(noun: str) -> str:
    return "an" if noun[0] in "aeiou" else "a"


def gen_geometry(seed: int, count: int) -> list[TaskSample]:
    """"Is every X a Y?" over the fixed shape hierarchy, balanced ~50/50."""
    if count < 1:
        raise ValueError("count must be >= 1")
    positives, negatives = [], []
    for x in SHAPE_NAMES:
        for y in SHAPE_NAMES:
            (positives if reachable(SHAPE_EDGES, x, y) else negatives).append((x, y))
    rng = random.Random(f"{seed}:geometry")
    samples = []
    for index in range(count):
        pool = positives if rng.random() < 0.5 else negatives
        x, y = pool[rng.randrange(len(pool))]
        meta = {"x": x, "y": y}
        target = geometry_oracle(meta)
        text = f"Is every {x} {_article(y)} {y}?"
        samples.append(TaskSample("geometry", text, float(target), meta,
                                  seed, index))
    return samples


GENERATORS = {
    "syllogism": gen_syllogism,
    "sequence": gen_sequence,
    "algebra": gen_algebra,
    "combinatorics": gen_combinatorics,
    "geometry": gen_geometry,
}


def generate(family: str, seed: int, count: int) -> list[TaskSample]:
    if family not in GENERATORS:
        raise ValueError(f"unknown task family: {family!r}")
    return GENERATORS[family](seed, count)


def generate_all(seed: int, count_per_family: int,
                 families=FAMILIES) -> dict[str, list[TaskSample]]:
    return {fam: generate(fam, seed, count_per_family) for fam in families}


# ---------------------------------------------------------------------------
# splitting and io


def split(samples: list[TaskSample], seed: int) -> DatasetSplit:
    """Deduplicate by question text, shuffle deterministically, cut 80/10/10."""
    seen: set[str] = set()
    unique = []
    for s in samples:
        if s.text not in seen:
            seen.add(s.text)
            unique.append(s)
    if len(unique) < 10:
        raise ValueError(
            f"split needs at least 10 unique samples, got {len(unique)}")
    rng = random.Random(f"{seed}:split")
    rng.shuffle(unique)
    n = len(unique)
    n_train = int(n * 0.8)
    n_val = int(n * 0.1)
    return DatasetSplit(
        train=unique[:n_train],
        val=unique[n_train:n_train + n_val],
        test=unique[n_train + n_val:],
    )


def sample_to_json(s: TaskSample) -> str:
    if s.family in CLASSIFICATION_FAMILIES:
        obj = {"family": s.family, "text": s.text, "label": s.label}
    else:
        obj = {"family": s.family, "text": s.text, "target": s.target,
               "meta": s.meta}
    return json.dumps(obj, ensure_ascii=False)


def write_jsonl(samples: list[TaskSample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(sample_to_json(s) + "\n")


def read_jsonl(path) -> list[TaskSample]:
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            family = obj.get("family")
            if family not in FAMILIES:
                raise ValueError(
                    f"{path}:{lineno + 1}: unknown family {family!r}")
            target = obj["label"] if family in CLASSIFICATION_FAMILIES \
                else obj["target"]
            samples.append(TaskSample(family, obj["text"], float(target),
                                      obj.get("meta", {}), 0, lineno))
    return samples
