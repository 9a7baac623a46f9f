"""Deterministic template paraphraser.

Rewrites never touch operational parameters (asset ids, sensor names, dates,
work-order ids), the keywords the stub planner keys on, or temporal phrases,
and never introduce words that would change a query's temporal bucket.

Families:
  punctuate   terminal punctuation and first-letter case (token preserving)
  reorder     front the trailing prepositional phrase (token preserving)
  synonyms    swap verbs and fillers from a fixed table
  polite      wrap the request in a courtesy phrase
  terse       drop articles and quantifier fillers
Variants beyond the single families are pairwise compositions.
"""

from __future__ import annotations

import itertools
import random
import re
from typing import Callable, Optional

_QUESTION_START = re.compile(r"^(what|which|who|when|where|how|is|are|was|were|can|could|do|does)\b", re.I)

SYNONYMS = [
    (r"\blist all\b", "enumerate all"),
    (r"\blist the\b", "show me the"),
    (r"\bshow\b", "display"),
    (r"\bwhich\b", "what"),
    (r"\bget the\b", "fetch the"),
    (r"\bgive me\b", "provide"),
    (r"\bretrieve\b", "pull"),
    (r"\bsummarize\b", "recap"),
    (r"\brecorded\b", "logged"),
    (r"\bfound\b", "seen"),
    (r"\bsupported\b", "available"),
    (r"\bknown\b", "documented"),
    (r"\bfull\b", "complete"),
    (r"\bcan\b", "could"),
    (r"\bover a\b", "across a"),
    (r"\bwhat was\b", "tell me"),
    (r"\bwhat is\b", "tell me"),
]

_IMPERATIVE_START = re.compile(
    r"^(list|show|get|retrieve|give|compare|forecast|summarize|fetch|pull|display|enumerate|recap|provide)\b", re.I
)

# courtesy frames per sentence type: imperative, question, bare noun phrase
POLITE = {
    "imperative": ["Please {}", "Could you {}", "Can you {}", "I need you to {}"],
    "question": ["Could you tell me {}", "I would like to know {}", "Quick question, {}", "Can you check {}"],
    "phrase": ["Tell me the {}", "I need the {}", "Please look up the {}", "Show me the {}"],
}

_FILLERS = re.compile(r"\b(the|all|a|any)\s+", re.I)

_PREPOSITIONS = (" for ", " of ", " on ", " in ", " from ", " at ", " by ")


def _strip_end(text: str) -> str:
    return text.rstrip(" ?.!")


def _lower_first(text: str) -> str:
    # keep acronyms and proper names ("AHU 1", "WO-1234") intact
    word = text.split(" ", 1)[0]
    if len(word) > 1 and word[1:].islower() and word[0].isupper():
        return text[0].lower() + text[1:]
    return text


def _upper_first(text: str) -> str:
    return text[:1].upper() + text[1:]


def _terminal(text: str, original: str) -> str:
    return text + ("?" if _QUESTION_START.match(original.strip()) else ".")


def punctuate(text: str, rng: random.Random) -> Optional[str]:
    body = _strip_end(text)
    if rng.random() < 0.5:
        body = _lower_first(body)
    return _terminal(body, text)


def reorder(text: str, rng: random.Random) -> Optional[str]:
    body = _strip_end(text)
    low = body.lower()
    best = -1
    for prep in _PREPOSITIONS:
        i = low.rfind(prep)
        if i <= 0:
            continue
        if prep == " on " and low[:i].endswith("based"):
            continue
        if prep != " from " and re.search(r"\bfrom \d{4}-\d{2}-\d{2}$", low[:i]):
            continue  # would split a date range
        tail = body[i + 1:]
        if len(tail.split()) > 7 or len(body[:i].split()) < 2:
            continue
        best = max(best, i)
    if best < 0:
        return None
    head, tail = body[:best], body[best + 1:]
    return _terminal(f"{_upper_first(tail)}, {_lower_first(head)}", text)


def synonyms(text: str, rng: random.Random) -> Optional[str]:
    applicable = [(p, r) for p, r in SYNONYMS if re.search(p, text, re.I)]
    if not applicable:
        return None
    k = 1 if len(applicable) == 1 else rng.choice((1, 2))
    out = text
    for pattern, repl in rng.sample(applicable, k):
        def sub(m: re.Match, repl=repl) -> str:
            return _upper_first(repl) if m.group(0)[0].isupper() else repl

        out = re.sub(pattern, sub, out, count=1, flags=re.I)
    return out if out != text else None


def _sentence_type(text: str) -> str:
    if _IMPERATIVE_START.match(text.strip()):
        return "imperative"
    if _QUESTION_START.match(text.strip()):
        return "question"
    return "phrase"


def polite(text: str, rng: random.Random) -> Optional[str]:
    if (" " + text.split(" ", 1)[0].lower() + " ") in _PREPOSITIONS:
        return None  # already starts with a fronted phrase
    kind = _sentence_type(text)
    frame = rng.choice(POLITE[kind])
    end = "?" if kind == "question" or frame.startswith(("Could", "Can")) else "."
    return frame.format(_lower_first(_strip_end(text))) + end


def terse(text: str, rng: random.Random) -> Optional[str]:
    out = _FILLERS.sub("", text)
    return _upper_first(out) if out != text else None


FAMILIES: list[tuple[str, Callable[[str, random.Random], Optional[str]]]] = [
    ("punctuate", punctuate),
    ("reorder", reorder),
    ("synonyms", synonyms),
    ("polite", polite),
    ("terse", terse),
]


def candidates(text: str, rng_seed: int = 0) -> list[str]:
    """All distinct rewrites of ``text`` in variant order."""
    rng = random.Random(f"{rng_seed}|{text}")
    singles = []
    for _, fn in FAMILIES:
        out = fn(text, rng)
        if out is not None:
            singles.append(out)
    pairs = []
    for (_, f), (_, g) in itertools.permutations(FAMILIES, 2):
        first = f(text, rng)
        if first is None:
            continue
        out = g(first, rng)
        if out is not None:
            pairs.append(out)
    rng.shuffle(singles)
    rng.shuffle(pairs)
    seen = {text}
    ordered = []
    for c in singles + pairs:
        if c not in seen:
            seen.add(c)
            ordered.append(c)
    return ordered


def paraphrase(text: str, variant_index: int, rng_seed: int = 0) -> str:
    if variant_index < 0:
        raise ValueError("variant_index must be >= 0")
    options = candidates(text, rng_seed)
    if not options:
        return text
    return options[variant_index % len(options)]


# --------------------------------------------------------------------------
# Parameter-shifted rewrites (the collision regression)

ASSET_SHIFTS = {
    "Chiller 6": "Chiller 9",
    "Chiller 9": "Chiller 6",
    "Chiller 3": "Chiller 12",
    "Chiller 12": "Chiller 3",
    "AHU 1": "AHU 2",
    "AHU 2": "AHU 1",
    "Pump 4": "Pump 7",
    "Pump 7": "Pump 4",
    "Boiler 2": "Boiler 5",
    "Boiler 5": "Boiler 2",
}

SENSOR_SHIFTS = {
    "Tonnage": "Power Input",
    "Power Input": "Tonnage",
    "Supply Temperature": "Return Temperature",
    "Efficiency": "Tonnage",
    "Vibration": "Discharge Pressure",
    "Discharge Pressure": "Vibration",
    "Fan Speed": "Supply Air Temperature",
    "Condenser Water Flow": "Power Input",
}

_ISO_MONTH = re.compile(r"\b(\d{4})-06-(\d{2})\b")


def _shift_asset(text: str) -> Optional[str]:
    for old, new in ASSET_SHIFTS.items():
        m = re.search(rf"\b{re.escape(old)}\b", text)
        if m:
            return text[: m.start()] + new + text[m.end():]
    return None


def _shift_sensor(text: str) -> Optional[str]:
    for old in sorted(SENSOR_SHIFTS, key=len, reverse=True):
        m = re.search(rf"(?<![\w-]){re.escape(old)}\b", text)
        if m and not re.match(r"\s+Temperature", text[m.end():]):
            return text[: m.start()] + SENSOR_SHIFTS[old] + text[m.end():]
    return None


def _shift_window(text: str) -> Optional[str]:
    if _ISO_MONTH.search(text):
        return _ISO_MONTH.sub(r"\1-12-\2", text)
    if re.search(r"\bJune\b", text):
        return re.sub(r"\bJune\b", "December", text)
    return None


SHIFTS = [("asset", _shift_asset), ("sensor", _shift_sensor), ("window", _shift_window)]


def shifted_variants(text: str) -> list[tuple[str, str]]:
    """(kind, text) for every applicable single-parameter shift."""
    out = []
    for kind, fn in SHIFTS:
        s = fn(text)
        if s is not None and s != text:
            out.append((kind, s))
    return out


def adversarial_paraphrase(text: str, variant_index: int, rng_seed: int = 0) -> Optional[tuple[str, str]]:
    """A same-frame rewrite with exactly one parameter changed, or None.

    Only token-preserving rewrites are layered on top, so the result stays
    as close to the original frame as a real near-duplicate would.
    """
    shifts = shifted_variants(text)
    if not shifts:
        return None
    kind, shifted = shifts[variant_index % len(shifts)]
    rng = random.Random(f"{rng_seed}|{variant_index}|{shifted}")
    return kind, punctuate(shifted, rng) or shifted


__all__ = [
    "FAMILIES",
    "adversarial_paraphrase",
    "candidates",
    "paraphrase",
    "shifted_variants",
]
