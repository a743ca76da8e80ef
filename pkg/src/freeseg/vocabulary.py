"""Caption keywords -> candidate classes.

Entity extraction uses a self-contained rule-based noun tagger (lexicon of
function words, common caption adjectives/verbs, suffix heuristics, rule-based
singularization). It needs no downloaded models, which keeps the whole
pipeline runnable offline; captions are short declarative sentences, where
this style of tagging is reliable.

Matching embeds keywords raw and class names through a prompt template, then
keeps, per keyword, the nearest class iff its cosine distance does not exceed
the keyword's mean distance to all classes.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

DEFAULT_PROMPT = "a photo of a {}"
UNLABELED = "unlabeled"

_WORD = re.compile(r"[A-Za-z]+")

# Function words and caption filler that can never be object keywords.
_STOPWORDS = frozenset("""
a an the this that these those some any each every no all both few many much
most several either neither another other such what which who whom whose
i you he she it we they me him her us them my your his its our their mine
yours hers ours theirs myself yourself himself herself itself ourselves
themselves and or but nor so yet for of in on at by with from up down into
onto over under above below between among through across behind beside
besides near next against along around before after during within without
about toward towards upon off out is are was were be been being am do does
did done have has had having will would shall should may might must can
could ought need dare as if then than because while when where how why not
only very too also just even still again once here there now then away
one two three four five six seven eight nine ten eleven twelve first second
third half dozen couple lot group bunch pair set front back top side middle
left right
""".split())

# Common caption adjectives (would otherwise pass the suffix checks). Words
# that double as dataset object classes (orange, glass, remote, light) are
# deliberately absent: object recall wins over adjective precision here.
_ADJECTIVES = frozenset("""
small big large little tiny huge giant great long short tall wide narrow
young old new modern ancient white black red green blue yellow brown grey
gray purple pink golden silver dark bright pale colorful beautiful pretty
cute lovely nice good bad happy sad angry calm quiet loud busy empty full
closed clean dirty wet dry hot cold warm cool sunny cloudy rainy snowy
foggy windy blurry fuzzy furry fluffy hairy soft hard smooth rough sharp
dull heavy fresh ripe raw sweet sour wooden metal plastic stone brick
leather shiny rusty lush dense sparse distant nearby urban rural wild
domestic different various single lone solitary
""".split())

# High-frequency caption verbs that escape the -ing/-ed suffix checks.
_VERBS = frozenset("""
sit sits stand stands lie lies lay lays walk walks run runs jump jumps fly
eat eats drink drinks hold holds carry carries wear wears ride rides drive
drives look looks watch watches stare stares gaze gazes rest rests lean
leans graze grazes swim swims play plays catch catches throw throws hang
hangs perch perches float floats pose poses appear appears seem seems show
shows contain contains include includes feature features depict depicts
fills fill
""".split())

# Words ending in -ing/-ed/-ly that are genuinely nouns.
_NOUN_EXCEPTIONS = frozenset("""
building painting ceiling clothing lighting wedding pudding icing railing
awning thing swing spring string duckling dumpling morning evening shed
sled weed seed breed reed speed butterfly dragonfly family lily jelly belly
""".split())

_IRREGULAR_PLURALS = {
    "men": "man",
    "women": "woman",
    "children": "child",
    "people": "person",
    "geese": "goose",
    "mice": "mouse",
    "feet": "foot",
    "teeth": "tooth",
    "oxen": "ox",
    "sheep": "sheep",
    "deer": "deer",
    "fish": "fish",
    "scissors": "scissors",
    "glasses": "glasses",
    "pants": "pants",
    "shorts": "shorts",
    "leaves": "leaf",
    "shelves": "shelf",
    "wolves": "wolf",
    "knives": "knife",
    "loaves": "loaf",
    "calves": "calf",
}

# Singular words that end in s and must not be de-pluralized.
_S_FINAL_SINGULARS = frozenset(
    "bus gas lens iris tennis chaos circus campus cactus octopus bonus virus "
    "atlas canvas asparagus hummus walrus".split()
)


@dataclass
class EntityList:
    """Ordered, deduplicated lowercase noun keywords from one caption."""

    keywords: list[str]
    source_caption: str


@dataclass
class KeywordMatch:
    keyword: str
    class_index: int | None
    min_distance: float
    mean_distance: float


@dataclass
class CandidateClassSet:
    """Dataset vocabulary plus the class indices surviving the keyword filter."""

    dataset_classes: list[str]
    candidates: set[int] = field(default_factory=set)
    per_keyword: list[KeywordMatch] = field(default_factory=list)

    def class_name(self, index: int) -> str:
        return self.dataset_classes[index]


def singularize(word: str) -> str:
    if word in _IRREGULAR_PLURALS:
        return _IRREGULAR_PLURALS[word]
    if word in _S_FINAL_SINGULARS or not word.endswith("s"):
        return word
    if word.endswith("ss"):
        return word
    if word.endswith("ies") and len(word) > 4:
        return word[:-3] + "y"
    if word.endswith(("ses", "xes", "zes", "ches", "shes")):
        return word[:-2]
    return word[:-1]


def _is_noun(word: str) -> bool:
    if word in _STOPWORDS or word in _ADJECTIVES or word in _VERBS:
        return False
    if word in _NOUN_EXCEPTIONS:
        return True
    if word.endswith("ing") and len(word) > 4:
        return False
    if word.endswith("ed") and len(word) > 3:
        return False
    if word.endswith("ly") and len(word) > 3:
        return False
    return True


def extract_entities(caption: str) -> EntityList:
    """Pull object nouns from a caption, lowercased and singular, first-seen order."""
    if not caption or not caption.strip():
        raise ValueError("caption must be non-empty")
    keywords: list[str] = []
    seen: set[str] = set()
    for token in _WORD.findall(caption.lower()):
        if not _is_noun(token):
            continue
        lemma = singularize(token)
        if lemma and lemma not in seen:
            seen.add(lemma)
            keywords.append(lemma)
    return EntityList(keywords=keywords, source_caption=caption)


def rank_classes(distances: np.ndarray) -> tuple[int, bool]:
    """Nearest class index (ties to the lowest index) and the accept decision.

    Accept iff the minimum distance is <= the mean over all classes; the
    inclusive boundary means the degenerate all-equal case accepts. Both the
    argmin and the comparison are invariant under affine maps a + b*d (b > 0).
    The comparison carries a 1e-12 relative guard: min <= mean is an exact
    identity over the reals, and without the guard a 1-ulp rounding of the
    mean can spuriously reject the all-equal boundary case.
    """
    d = np.asarray(distances, dtype=np.float64)
    best = int(np.argmin(d))
    mean = float(d.mean())
    return best, bool(d[best] <= mean + 1e-12 * max(1.0, abs(mean)))


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    return float(1.0 - np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def _as_vector(embedding) -> np.ndarray:
    values = getattr(embedding, "values", embedding)
    return np.asarray(values, dtype=np.float64).ravel()


def match_candidates(
    entities: EntityList,
    dataset_classes: list[str],
    text_embed: Callable[[str], np.ndarray],
    prompt_template: str = DEFAULT_PROMPT,
) -> CandidateClassSet:
    """Match each keyword to its nearest dataset class, mean-distance filtered.

    Distances are cosine distances between the raw keyword embedding and the
    prompt-templated class embeddings over all non-unlabeled classes. A
    keyword is dropped when its nearest class sits above its mean distance.
    """
    if len(dataset_classes) < 2:
        raise ValueError("need at least one class besides the unlabeled slot")
    class_vectors = [
        _as_vector(text_embed(prompt_template.format(name))) for name in dataset_classes[1:]
    ]
    result = CandidateClassSet(dataset_classes=list(dataset_classes))
    for keyword in entities.keywords:
        kv = _as_vector(text_embed(keyword))
        distances = np.array([cosine_distance(kv, cv) for cv in class_vectors])
        best, accepted = rank_classes(distances)
        class_index = best + 1 if accepted else None  # +1 skips the unlabeled slot
        if accepted:
            result.candidates.add(class_index)
        result.per_keyword.append(
            KeywordMatch(
                keyword=keyword,
                class_index=class_index,
                min_distance=float(distances[best]),
                mean_distance=float(distances.mean()),
            )
        )
    return result


def open_vocab_candidates(entities: EntityList) -> CandidateClassSet:
    """Open-vocabulary mode: the caption keywords are the class list, unfiltered."""
    classes = [UNLABELED] + list(entities.keywords)
    result = CandidateClassSet(dataset_classes=classes, candidates=set(range(1, len(classes))))
    for i, keyword in enumerate(entities.keywords, start=1):
        result.per_keyword.append(
            KeywordMatch(keyword=keyword, class_index=i, min_distance=0.0, mean_distance=0.0)
        )
    return result


def all_class_candidates(dataset_classes: list[str]) -> CandidateClassSet:
    """No caption gating: every non-unlabeled class is a candidate (ablation baseline)."""
    if len(dataset_classes) < 2:
        raise ValueError("need at least one class besides the unlabeled slot")
    return CandidateClassSet(
        dataset_classes=list(dataset_classes),
        candidates=set(range(1, len(dataset_classes))),
    )


def load_class_list(path: str | Path) -> list[str]:
    """Read a vocabulary file: one class per line, line 1 is the unlabeled slot."""
    lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
    classes = [ln for ln in lines if ln and not ln.startswith("#")]
    if not classes:
        raise ValueError(f"empty class list: {path}")
    if classes[0].lower() != UNLABELED:
        raise ValueError(f"line 1 of {path} must be '{UNLABELED}', got {classes[0]!r}")
    return classes
