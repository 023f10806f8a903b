"""ARPA back-off n-gram reader and word-level rescorer.

Reads standard ARPA text (optionally gzip-compressed) up to tri-grams and
answers log10 conditional probabilities with the usual back-off recursion:
a missing n-gram falls back to the (n-1)-gram scaled by the history's
back-off weight, a missing back-off weight counts as 0.0 (weight 1), and
unknown words at order 1 map to the <unk> entry when present, else to a
configurable floor. Queries never fail; the model is immutable after parse
and safe to share across threads.
"""

from __future__ import annotations

import gzip
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

__all__ = [
    "ArpaModel",
    "ArpaParseError",
    "parse_arpa",
    "parse_arpa_file",
    "write_arpa",
    "log_prob",
    "rescore",
]

LN10 = math.log(10.0)
UNK = "<unk>"
DEFAULT_UNK_LOG10 = -7.0


class ArpaParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class ArpaModel:
    """Unigram/bigram/trigram tables of (log10 prob, log10 back-off)."""

    order: int
    ngrams: dict = field(default_factory=dict)  # order -> {words tuple: (logp, bow)}
    unk_log10: float = DEFAULT_UNK_LOG10

    @property
    def vocab(self):
        return {w[0] for w in self.ngrams.get(1, ())}

    def counts(self):
        return {n: len(table) for n, table in self.ngrams.items()}

    def lookup(self, words: Tuple[str, ...]):
        return self.ngrams.get(len(words), {}).get(words)


def parse_arpa(stream) -> ArpaModel:
    """Parse an ARPA model from an iterable of text lines.

    Enforces the \\data\\ header counts; malformed content is reported with
    its line number.
    """
    declared = {}
    ngrams = {}
    section = None  # None | "data" | order int | "done"
    lineno = 0
    for raw in stream:
        lineno += 1
        line = raw.strip()
        if not line:
            continue
        if line == "\\data\\":
            section = "data"
            continue
        if line.endswith("-grams:") and line.startswith("\\"):
            try:
                order = int(line[1:].split("-")[0])
            except ValueError:
                raise ArpaParseError(f"bad section header {line!r}", lineno)
            if order not in declared:
                raise ArpaParseError(f"section {line!r} was not declared in \\data\\", lineno)
            _check_section_complete(declared, ngrams, lineno, upto=order)
            section = order
            ngrams[order] = {}
            continue
        if line == "\\end\\":
            _check_section_complete(declared, ngrams, lineno, upto=None)
            section = "done"
            continue
        if section == "data":
            if not line.startswith("ngram"):
                raise ArpaParseError(f"expected 'ngram N=count', got {line!r}", lineno)
            try:
                spec = line.split(None, 1)[1]
                order_s, count_s = spec.split("=")
                declared[int(order_s)] = int(count_s)
            except (IndexError, ValueError):
                raise ArpaParseError(f"malformed count line {line!r}", lineno)
            continue
        if isinstance(section, int):
            fields = line.split()
            n = section
            if len(fields) == n + 1:
                bow = 0.0
            elif len(fields) == n + 2:
                try:
                    bow = float(fields[-1])
                except ValueError:
                    raise ArpaParseError(f"non-numeric back-off weight {fields[-1]!r}", lineno)
            else:
                raise ArpaParseError(
                    f"expected {n + 1} or {n + 2} fields for a {n}-gram, got {len(fields)}",
                    lineno,
                )
            try:
                logp = float(fields[0])
            except ValueError:
                raise ArpaParseError(f"non-numeric log probability {fields[0]!r}", lineno)
            words = tuple(fields[1 : n + 1])
            if len(ngrams[n]) >= declared[n]:
                raise ArpaParseError(
                    f"more {n}-grams than the declared {declared[n]}", lineno
                )
            ngrams[n][words] = (logp, bow)
            continue
        raise ArpaParseError(f"unexpected content {line!r} before \\data\\", lineno)

    if section != "done":
        raise ArpaParseError("missing \\end\\ marker", lineno + 1)
    if not declared:
        raise ArpaParseError("missing \\data\\ header", lineno + 1)
    order = max(declared)
    if order > 3:
        raise ArpaParseError(f"order {order} not supported (tri-gram maximum)", lineno)
    model = ArpaModel(order=order, ngrams=ngrams)
    unk = model.lookup((UNK,))
    if unk is not None:
        model.unk_log10 = unk[0]
    return model


def _check_section_complete(declared, ngrams, lineno, upto):
    for order, count in declared.items():
        if upto is not None and order >= upto:
            continue
        got = len(ngrams.get(order, ()))
        if order not in ngrams and count == 0:
            continue
        if got != count:
            raise ArpaParseError(
                f"\\data\\ declared {count} {order}-grams but {got} were listed", lineno
            )


def parse_arpa_file(path) -> ArpaModel:
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rt", encoding="utf-8") as fh:
        return parse_arpa(fh)


def write_arpa(model: ArpaModel, fh):
    """Serialize back to ARPA text (entry order follows the tables)."""
    fh.write("\\data\\\n")
    for order in range(1, model.order + 1):
        fh.write(f"ngram {order}={len(model.ngrams.get(order, {}))}\n")
    for order in range(1, model.order + 1):
        fh.write(f"\n\\{order}-grams:\n")
        for words, (logp, bow) in model.ngrams.get(order, {}).items():
            tail = "" if bow == 0.0 else f"\t{bow:.6f}"
            fh.write(f"{logp:.6f}\t{' '.join(words)}{tail}\n")
    fh.write("\n\\end\\\n")


def log_prob(model: ArpaModel, word: str, history: Tuple[str, ...] = ()) -> float:
    """log10 P(word | history) with back-off; history is up to two words,
    oldest first. Total function: unknown words hit <unk> or the floor."""
    history = tuple(history)[-(model.order - 1) :] if model.order > 1 else ()
    return _backoff(model, word, history)


def _backoff(model: ArpaModel, word: str, history: Tuple[str, ...]) -> float:
    entry = model.lookup(history + (word,))
    if entry is not None:
        return entry[0]
    if not history:
        unk = model.lookup((UNK,))
        return unk[0] if unk is not None else model.unk_log10
    hist_entry = model.lookup(history)
    bow = hist_entry[1] if hist_entry is not None else 0.0
    return bow + _backoff(model, word, history[1:])


def rescore(
    model: Optional[ArpaModel],
    word: str,
    history: Tuple[str, ...],
    lam: float = 1.0,
    beta: float = 0.0,
):
    """Score delta (natural log) for a just-completed word, plus the shifted
    history. Empty words (consecutive delimiters) contribute nothing."""
    if not word:
        return 0.0, history
    delta = beta
    if model is not None and lam != 0.0:
        delta += lam * log_prob(model, word, history) * LN10
    new_history = (tuple(history) + (word,))[-2:]
    return delta, new_history
