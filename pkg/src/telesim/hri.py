"""Text-level instruction gate, task identification, clarification dialogue.

Utterances pass a wake-word gate, then a keyword grammar resolves verbs and
noun phrases against editable synonym tables. Anything the grammar cannot pin
down comes back as a Clarification; a dialogue wrapper keeps every open
question bounded to three rounds.
"""
from __future__ import annotations

import csv
import itertools
import re
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

from .world import REGION_KINDS, Layout, region_kind_at

DATA_DIR = Path(__file__).parent / "data"

MOTION_VERBS = (("take", "me"), ("go",), ("navigate",), ("move",), ("head",),
                ("drive",), ("come",))
OBJECT_VERBS = (("look", "for"), ("find",), ("search",), ("check",),
                ("locate",), ("fetch",))
STOP_VERBS = (("stop",), ("halt",))
FOLLOW_VERBS = (("follow",),)

VIEW_WORDS = {"see", "sight", "view"}
CENTER_WORDS = {"center", "centre", "middle"}
_FILLERS = {"the", "a", "an", "my", "your", "that", "this", "to", "into", "in",
            "at", "for", "of", "is", "if", "please", "me", "you", "can",
            "until", "and", "on", "near", "by"}
_PREPOSITIONS = {"to", "into", "at", "for", "near", "by"}

MAX_ROUNDS = 3


@dataclass(frozen=True)
class AreaGoal:
    region: str
    variant: str = "area"


@dataclass(frozen=True)
class ObjectGoal:
    cls: str
    landmark: str = ""


@dataclass(frozen=True)
class PointGoal:
    x: float
    y: float


@dataclass(frozen=True)
class Follow:
    pass


@dataclass(frozen=True)
class Manual:
    pass


@dataclass(frozen=True)
class StopTask:
    pass


@dataclass(frozen=True)
class Instruction:
    raw: str
    task: object
    composite: tuple = ()   # ordered task list when the utterance chains two
    note: str = ""

    def __post_init__(self):
        if len(self.composite) > 2:
            raise ValueError("composite instructions are limited to two tasks")


@dataclass
class Clarification:
    category: str      # missing_parameter | unknown_parameter | multiple_matches
    question: str
    id: int = 0
    round: int = 1
    context: dict = field(default_factory=dict)


class Vocab:
    """Phrase table mapping surface forms to region/object canonicals."""

    def __init__(self, entries: dict):
        self.entries = entries
        self.max_len = max((len(k) for k in entries), default=1)

    def scan(self, tokens):
        """Longest-match left-to-right pass; returns (pos, length, entry)."""
        out = []
        i = 0
        n = len(tokens)
        while i < n:
            hit = None
            for L in range(min(self.max_len, n - i), 0, -1):
                e = self.entries.get(tuple(tokens[i:i + L]))
                if e is not None:
                    hit = (i, L, e)
                    break
            if hit:
                out.append(hit)
                i += hit[1]
            else:
                i += 1
        return out


def build_vocab(object_classes, region_kinds=REGION_KINDS,
                synonyms_file=None) -> Vocab:
    entries = {}

    def add(phrase: str, domain: str, canonical: str):
        e = entries.setdefault(tuple(phrase.split()), {})
        e.setdefault(domain, canonical)

    for r in region_kinds:
        add(r, "region", r)
    for o in object_classes:
        add(o, "object", o)
    if synonyms_file is not None:
        with open(synonyms_file, newline="") as f:
            for row in csv.DictReader(f):
                syn, canon = row["synonym"].strip(), row["canonical"].strip()
                known = False
                if canon in region_kinds:
                    add(syn, "region", canon)
                    known = True
                if canon in object_classes:
                    add(syn, "object", canon)
                    known = True
                if not known:
                    raise ValueError(f"synonym {syn!r} maps to unknown {canon!r}")
    return Vocab(entries)


@lru_cache(maxsize=1)
def default_vocab() -> Vocab:
    from .knowledge import default_graph
    g = default_graph()
    return build_vocab(g.object_classes, REGION_KINDS, DATA_DIR / "synonyms.csv")


def gate_command(utterance: str, wake_word: str = "robot"):
    """Text after the wake word, or None when the utterance lacks it."""
    m = re.match(rf"\s*{re.escape(wake_word)}\b[\s,.:!]*", utterance,
                 re.IGNORECASE)
    if m is None:
        return None
    return utterance[m.end():].strip()


def _tokens(text: str):
    return re.findall(r"[a-z]+|\d+(?:\.\d+)?", text.lower())


def _first_verb(tokens):
    """(kind, position after the verb) for the earliest verb phrase."""
    groups = (("stop", STOP_VERBS), ("follow", FOLLOW_VERBS),
              ("motion", MOTION_VERBS), ("object", OBJECT_VERBS))
    for i in range(len(tokens)):
        for kind, phrases in groups:
            for ph in phrases:
                if tuple(tokens[i:i + len(ph)]) == ph:
                    return kind, i + len(ph)
    return None, 0


def _variant(tokens) -> str:
    toks = set(tokens)
    if toks & CENTER_WORDS:
        return "center"
    if toks & VIEW_WORDS:
        return "view"
    return "area"


def _numbers(tokens):
    out = []
    for t in tokens:
        if re.fullmatch(r"\d+(?:\.\d+)?", t):
            out.append(float(t))
    return out


def _leftover_noun(tokens, start: int) -> str:
    """Best-effort noun phrase for the unknown-parameter question."""
    tail = tokens[start:]
    for i in range(len(tail) - 1, -1, -1):
        if tail[i] in _PREPOSITIONS:
            tail = tail[i + 1:]
            break
    words = [t for t in tail if t not in _FILLERS
             and t not in VIEW_WORDS and t not in CENTER_WORDS]
    return " ".join(words)


def _unknown_or_missing(text, tokens, after_verb):
    noun = _leftover_noun(tokens, after_verb)
    if noun:
        return Clarification(
            "unknown_parameter",
            f"I do not recognize '{noun}'. Which area or object do you mean?",
            context={"text": text})
    return Clarification(
        "missing_parameter", "What should the target be? Name an area or an object.",
        context={"text": text})


def identify_task(text: str, vocab: Vocab | None = None):
    """Instruction for a recognized command, Clarification otherwise."""
    if not text or not text.strip():
        raise ValueError("empty command text")
    vocab = vocab or default_vocab()
    tokens = _tokens(text)
    verb, after = _first_verb(tokens)

    if verb == "stop":
        return Instruction(text, StopTask())
    if verb == "follow":
        return Instruction(text, Follow())
    if verb is None:
        if "manual" in tokens:
            return Instruction(text, Manual())
        return Clarification(
            "missing_parameter", "I did not catch a command. What should I do?",
            context={"text": text})

    mentions = vocab.scan(tokens)
    if verb == "motion":
        nums = _numbers(tokens[after:])
        if len(nums) >= 2:
            return Instruction(text, PointGoal(nums[0], nums[1]))
        if not mentions:
            return _unknown_or_missing(text, tokens, after)
        pos, length, entry = mentions[0]
        if "region" in entry:
            task = AreaGoal(entry["region"], _variant(tokens))
            # "... and find the X" chains an object search after arrival
            rest = tokens[pos + length:]
            v2, a2 = _first_verb(rest)
            if v2 == "object":
                for p2, _, e2 in vocab.scan(rest[a2:]):
                    if "object" in e2:
                        obj = ObjectGoal(e2["object"])
                        return Instruction(text, task, composite=(task, obj))
            return Instruction(text, task)
        return Instruction(text, ObjectGoal(entry["object"]))

    # object verb: find/search/check/look for/locate/fetch
    obj = next((e["object"] for _, _, e in mentions if "object" in e), None)
    region = next((e["region"] for _, _, e in mentions
                   if "region" in e and e.get("object") != obj), None)
    if obj is not None and region is not None:
        area = AreaGoal(region, _variant(tokens))
        return Instruction(text, area, composite=(area, ObjectGoal(obj)))
    if obj is not None:
        return Instruction(text, ObjectGoal(obj))
    if region is not None:
        return Instruction(text, AreaGoal(region, _variant(tokens)))
    return _unknown_or_missing(text, tokens, after)


def _context_records(context):
    if isinstance(context, Layout):
        return [(o.cls, o.point, region_kind_at(context, o.point))
                for o in context.objects]
    return [(cls, pt, region) for cls, pt, region in context]


def disambiguate(task: ObjectGoal, context, region: str | None = None):
    """Clarification when the map shows several instances of the target class.

    context is a Layout or an iterable of (cls, point, region_kind) records;
    region narrows the count to the resolved area when the instruction had one.
    """
    records = _context_records(context)
    matches = [(cls, pt, reg) for cls, pt, reg in records
               if cls == task.cls and (region is None or reg == region)]
    if len(matches) < 2:
        return None
    options = []
    for cls, pt, reg in matches:
        best, best_d = None, float("inf")
        for ocls, opt, _ in records:
            if ocls == cls:
                continue
            d = pt.dist(opt)
            if d < best_d:
                best, best_d = ocls, d
        options.append((best or reg, (pt.x, pt.y)))
    where = f" in the {region}" if region else ""
    phrasing = " or ".join(f"the one near the {lm}" for lm, _ in options)
    question = (f"I know of {len(matches)} {task.cls}s{where}: "
                f"{phrasing}. Which one?")
    return Clarification("multiple_matches", question,
                         context={"cls": task.cls, "options": options,
                                  "text": task.cls})


def resolve(clar: Clarification, answer: str, vocab: Vocab | None = None):
    """Re-run identification over the merged text; give up after three rounds."""
    vocab = vocab or default_vocab()
    if clar.category == "multiple_matches":
        tokens = _tokens(answer)
        mentions = vocab.scan(tokens)
        named = {e["object"] for _, _, e in mentions if "object" in e}
        for lm, _ in clar.context.get("options", ()):
            if lm in named or lm in answer.lower():
                return Instruction(answer, ObjectGoal(clar.context["cls"],
                                                      landmark=lm))
        out = Clarification(clar.category, clar.question, round=clar.round + 1,
                            context=clar.context)
    else:
        merged = clar.context.get("text", "") + " " + answer
        out = identify_task(merged, vocab)
        if isinstance(out, Instruction):
            return out
        out.round = clar.round + 1
        out.context.setdefault("text", clar.context.get("text", ""))
    if out.round > MAX_ROUNDS:
        return Instruction(answer, StopTask(),
                           note="could not resolve the request; stopping")
    return out


class Dialogue:
    """Per-session dialogue state: wake-word gate plus bounded clarifications."""

    def __init__(self, wake_word: str = "robot", vocab: Vocab | None = None):
        self.wake_word = wake_word
        self.vocab = vocab or default_vocab()
        self._ids = itertools.count(1)
        self.open: dict[int, Clarification] = {}

    def _register(self, clar: Clarification) -> Clarification:
        clar.id = next(self._ids)
        self.open[clar.id] = clar
        return clar

    def submit(self, utterance: str, context=None):
        """None when the wake word is absent, else Instruction or Clarification."""
        cmd = gate_command(utterance, self.wake_word)
        if cmd is None:
            return None
        if not cmd:
            return self._register(Clarification(
                "missing_parameter", "Yes? Tell me what to do.",
                context={"text": ""}))
        out = identify_task(cmd, self.vocab)
        if isinstance(out, Clarification):
            return self._register(out)
        goal = out.composite[-1] if out.composite else out.task
        if context is not None and isinstance(goal, ObjectGoal):
            region = out.composite[0].region if out.composite else None
            clar = disambiguate(goal, context, region)
            if clar is not None:
                clar.context["instruction"] = out
                return self._register(clar)
        return out

    def answer(self, clar_id: int, text: str):
        """Resolve an open clarification; unknown ids get a fresh complaint."""
        clar = self.open.pop(clar_id, None)
        if clar is None:
            raise KeyError(f"no open clarification {clar_id}")
        out = resolve(clar, text, self.vocab)
        if isinstance(out, Clarification):
            return self._register(out)
        base = clar.context.get("instruction")
        if base is not None and isinstance(out.task, ObjectGoal):
            tasks = tuple(out.task if isinstance(t, ObjectGoal) else t
                          for t in base.composite) or ()
            return Instruction(base.raw, tasks[0] if tasks else out.task,
                               composite=tasks)
        return out


def _param(task) -> str:
    if isinstance(task, AreaGoal):
        return task.region if task.variant == "area" else f"{task.region}/{task.variant}"
    if isinstance(task, ObjectGoal):
        return task.cls
    if isinstance(task, PointGoal):
        return f"{task.x:g},{task.y:g}"
    return ""


def signature(result):
    """(task, param) strings, the corpus fixture's comparison form."""
    if result is None:
        return "None", ""
    if isinstance(result, Clarification):
        return "Clarification", result.category
    if result.composite:
        return ("+".join(type(t).__name__ for t in result.composite),
                "+".join(_param(t) for t in result.composite))
    return type(result.task).__name__, _param(result.task)


def load_corpus(path=None):
    """Rows of (utterance, expected_task, expected_param)."""
    path = path or DATA_DIR / "hri_corpus.csv"
    with open(path, newline="") as f:
        return [(r["utterance"], r["expected_task"], r["expected_param"])
                for r in csv.DictReader(f)]
