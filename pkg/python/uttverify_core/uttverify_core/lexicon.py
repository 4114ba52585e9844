from __future__ import annotations

import hashlib
import itertools
import logging
import math
from importlib.resources import files
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from .exceptions import (
    G2PError,
    LexiconFormatError,
    ScriptError,
    UnknownPhoneError,
)

logger = logging.getLogger(__file__)

SILENCE_DIRECTIVE = ":silence"
DEFAULT_EXPANSION_CAP = 32

# Longest match first: every digraph is tried before the single letters.
DIGRAPH_RULES: Dict[str, Tuple[str, ...]] = {
    "th": ("th",),
    "sh": ("sh",),
    "ch": ("ch",),
    "ng": ("ng",),
    "ph": ("f",),
    "ee": ("iy",),
    "oo": ("uw",),
    "ai": ("ey",),
    "ou": ("aw",),
    "oa": ("ow",),
    "ck": ("k",),
    "wh": ("w",),
    "qu": ("k", "w"),
}

LETTER_RULES: Dict[str, Tuple[str, ...]] = {
    "a": ("ae",),
    "b": ("b",),
    "c": ("k",),
    "d": ("d",),
    "e": ("eh",),
    "f": ("f",),
    "g": ("g",),
    "h": ("hh",),
    "i": ("ih",),
    "j": ("jh",),
    "k": ("k",),
    "l": ("l",),
    "m": ("m",),
    "n": ("n",),
    "o": ("aa",),
    "p": ("p",),
    "q": ("k",),
    "r": ("r",),
    "s": ("s",),
    "t": ("t",),
    "u": ("ah",),
    "v": ("v",),
    "w": ("w",),
    "x": ("k", "s"),
    "y": ("y",),
    "z": ("z",),
}

DEFAULT_PHONE = "ah"


class PhoneInventory(BaseModel):
    """
    The phone set. ``silence`` (if any) is one of ``phones`` but takes no part
    in ranking, so ``size`` counts the remaining symbols only.
    """

    model_config = ConfigDict(frozen=True)

    phones: Tuple[str, ...]
    silence: Optional[str] = None

    @field_validator("phones")
    @classmethod
    def _check_phones(cls, phones: Tuple[str, ...]) -> Tuple[str, ...]:
        for phone in phones:
            if not phone or phone != phone.strip() or len(phone.split()) != 1:
                raise ValueError(f"Invalid phone symbol {phone!r}")
        for i, phone in enumerate(phones):
            if phone in phones[:i]:
                raise ValueError(f"Duplicate phone symbol '{phone}'")
        return phones

    @model_validator(mode="after")
    def _check_silence(self) -> "PhoneInventory":
        if self.silence is not None and self.silence not in self.phones:
            raise ValueError(f"Silence symbol '{self.silence}' is not in the inventory")
        if len(self.ranking_phones) < 2:
            raise ValueError("An inventory needs at least 2 non-silence phones")
        return self

    @property
    def ranking_phones(self) -> Tuple[str, ...]:
        return tuple(p for p in self.phones if p != self.silence)

    @property
    def size(self) -> int:
        return len(self.ranking_phones)

    def __contains__(self, phone: str) -> bool:
        return phone in self.phones

    def __len__(self) -> int:
        return len(self.phones)

    def inventory_hash(self) -> str:
        text = "\n".join(self.phones) + f"\n{SILENCE_DIRECTIVE} {self.silence or '-'}\n"
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


class Pronunciation(BaseModel):
    model_config = ConfigDict(frozen=True)

    phones: Tuple[str, ...]

    @field_validator("phones")
    @classmethod
    def _non_empty(cls, phones: Tuple[str, ...]) -> Tuple[str, ...]:
        if not phones:
            raise ValueError("A pronunciation needs at least one phone")
        return phones

    def __str__(self) -> str:
        return " ".join(self.phones)


def _check_pronunciation(
    pron: Pronunciation, inventory: PhoneInventory, where: str = ""
) -> None:
    for phone in pron.phones:
        if phone not in inventory.ranking_phones:
            raise UnknownPhoneError(phone, where)


class Lexicon(BaseModel):
    """
    Word to pronunciation map. Words are case-folded; variants keep file order.
    """

    model_config = ConfigDict(frozen=True)

    entries: Dict[str, Tuple[Pronunciation, ...]]
    inventory: PhoneInventory

    @model_validator(mode="after")
    def _check_entries(self) -> "Lexicon":
        for word, variants in self.entries.items():
            if not variants:
                raise ValueError(f"Word '{word}' has no pronunciation")
            for pron in variants:
                _check_pronunciation(pron, self.inventory, f"word '{word}'")
        return self

    def words(self) -> Tuple[str, ...]:
        return tuple(self.entries)

    def lookup(self, word: str) -> Optional[Tuple[Pronunciation, ...]]:
        return self.entries.get(word.casefold())

    def __contains__(self, word: str) -> bool:
        return word.casefold() in self.entries

    def __len__(self) -> int:
        return len(self.entries)


class LatticeWord(BaseModel):
    model_config = ConfigDict(frozen=True)

    word: str
    variants: Tuple[Pronunciation, ...]
    oov: bool = False


class Expansion(BaseModel):
    """One path through a lattice: a pronunciation chosen for every word."""

    model_config = ConfigDict(frozen=True)

    index: int
    words: Tuple[Tuple[str, ...], ...]

    @property
    def phones(self) -> Tuple[str, ...]:
        return tuple(itertools.chain.from_iterable(self.words))


class PronunciationLattice(BaseModel):
    model_config = ConfigDict(frozen=True)

    words: Tuple[LatticeWord, ...]

    @field_validator("words")
    @classmethod
    def _non_empty(cls, words: Tuple[LatticeWord, ...]) -> Tuple[LatticeWord, ...]:
        if not words:
            raise ValueError("A lattice needs at least one word")
        return words

    @property
    def num_expansions(self) -> int:
        return math.prod(len(w.variants) for w in self.words)

    @property
    def oov_words(self) -> Tuple[str, ...]:
        return tuple(w.word for w in self.words if w.oov)

    def expansions(self, cap: Optional[int] = None) -> List[Expansion]:
        """
        Expansions in lattice order: the last word's variant varies fastest.
        At most ``cap`` expansions are returned when a cap is given.
        """
        combos: Iterator = itertools.product(*(w.variants for w in self.words))
        if cap is not None:
            if cap < 1:
                raise ValueError(f"Expansion cap must be at least 1, got {cap}")
            combos = itertools.islice(combos, cap)
        return [
            Expansion(index=i, words=tuple(p.phones for p in combo))
            for i, combo in enumerate(combos)
        ]


def load_inventory(path: Union[str, Path]) -> PhoneInventory:
    """
    Read an inventory file: one phone symbol per line, ``#`` comments, and an
    optional ``:silence <sym>`` line designating the silence phone.
    """
    path = Path(path)
    phones: List[str] = []
    silence = None
    with open(path, "r", encoding="utf-8") as fobj:
        for lineno, raw in enumerate(fobj, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == SILENCE_DIRECTIVE:
                if len(parts) != 2:
                    raise LexiconFormatError(f"expected '{SILENCE_DIRECTIVE} <sym>'", lineno)
                silence = parts[1]
                continue
            if len(parts) != 1:
                raise LexiconFormatError(f"expected one phone symbol, got {line!r}", lineno)
            if parts[0] in phones:
                raise LexiconFormatError(f"duplicate phone symbol '{parts[0]}'", lineno)
            phones.append(parts[0])
    if silence is not None and silence not in phones:
        phones.append(silence)
    try:
        return PhoneInventory(phones=tuple(phones), silence=silence)
    except ValidationError as e:
        raise LexiconFormatError(f"{path}: invalid inventory: {e}") from None


def save_inventory(inventory: PhoneInventory, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fobj:
        for phone in inventory.phones:
            fobj.write(f"{phone}\n")
        if inventory.silence is not None:
            fobj.write(f"{SILENCE_DIRECTIVE} {inventory.silence}\n")


def load_lexicon(path: Union[str, Path], inventory: PhoneInventory) -> Lexicon:
    path = Path(path)
    entries: Dict[str, List[Pronunciation]] = {}
    with open(path, "r", encoding="utf-8") as fobj:
        for lineno, raw in enumerate(fobj, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            word, *phones = line.split()
            word = word.casefold()
            if not phones:
                raise LexiconFormatError(f"empty pronunciation for '{word}'", lineno)
            pron = Pronunciation(phones=tuple(phones))
            _check_pronunciation(pron, inventory, f"{path}:{lineno}")
            variants = entries.setdefault(word, [])
            if pron in variants:
                raise LexiconFormatError(f"duplicate entry '{word} {pron}'", lineno)
            variants.append(pron)

    logger.debug("Loaded %d words from %s", len(entries), path)
    return Lexicon(
        entries={word: tuple(variants) for word, variants in entries.items()},
        inventory=inventory,
    )


def save_lexicon(lex: Lexicon, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fobj:
        for word, variants in lex.entries.items():
            for pron in variants:
                fobj.write(f"{word}\t{pron}\n")


def toy_inventory() -> PhoneInventory:
    return load_inventory(files("uttverify_core") / "data" / "toy_inventory.txt")


def toy_lexicon() -> Lexicon:
    return load_lexicon(files("uttverify_core") / "data" / "toy_lexicon.txt", toy_inventory())


def g2p_fallback(word: str) -> Pronunciation:
    """
    Rule-based letter-to-phone conversion. Non-alphabetic characters are
    dropped; letters without a rule map to ``DEFAULT_PHONE``.
    """
    letters = "".join(ch for ch in word.casefold() if ch.isalpha())
    if not letters:
        raise G2PError(f"No letters to convert in {word!r}")

    phones: List[str] = []
    i = 0
    while i < len(letters):
        digraph = letters[i : i + 2]
        if len(digraph) == 2 and digraph in DIGRAPH_RULES:
            phones.extend(DIGRAPH_RULES[digraph])
            i += 2
            continue
        phones.extend(LETTER_RULES.get(letters[i], (DEFAULT_PHONE,)))
        i += 1
    return Pronunciation(phones=tuple(phones))


def tokenize(script: str) -> List[str]:
    """Whitespace tokens, case-folded, with punctuation stripped."""
    tokens = []
    for raw in script.split():
        token = "".join(ch for ch in raw.casefold() if ch.isalnum())
        if token:
            tokens.append(token)
    return tokens


def script_to_lattice(script: str, lex: Lexicon) -> PronunciationLattice:
    tokens = tokenize(script)
    if not tokens:
        raise ScriptError(f"Script {script!r} contains no words")

    words = []
    for token in tokens:
        variants = lex.lookup(token)
        if variants is not None:
            words.append(LatticeWord(word=token, variants=variants))
            continue
        try:
            pron = g2p_fallback(token)
            _check_pronunciation(pron, lex.inventory)
        except (G2PError, UnknownPhoneError) as e:
            raise ScriptError(f"Cannot resolve word '{token}': {e}") from e
        logger.debug("Out-of-vocabulary word '%s' -> %s", token, pron)
        words.append(LatticeWord(word=token, variants=(pron,), oov=True))
    return PronunciationLattice(words=tuple(words))
