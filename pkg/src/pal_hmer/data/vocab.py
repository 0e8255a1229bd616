"""LaTeX tokenization and the token <-> id vocabulary."""
from __future__ import annotations

import re

from ..errors import UnknownTokenError

PAD, BOS, EOS = 0, 1, 2
SPECIALS = ("<pad>", "<bos>", "<eos>")

# backslash-words are single tokens; \{ style escapes too; anything else one char at a time
_TOKEN_RE = re.compile(r"\\[A-Za-z]+|\\.|\S")


def split_latex(label):
    return _TOKEN_RE.findall(label)


class Vocabulary:
    def __init__(self, tokens):
        seen = []
        for tok in tokens:
            if tok in SPECIALS:
                raise ValueError(f"{tok!r} is reserved")
            if tok not in seen:
                seen.append(tok)
        self.itos = list(SPECIALS) + seen
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    @classmethod
    def from_itos(cls, itos):
        """Rebuild from a full id -> token list (specials first), as stored beside checkpoints."""
        itos = list(itos)
        if tuple(itos[: len(SPECIALS)]) != SPECIALS:
            raise ValueError("token list must start with the special tokens")
        return cls(itos[len(SPECIALS):])

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def id(self, token):
        return self.stoi[token]

    def token(self, idx):
        return self.itos[idx]

    @property
    def tokens(self):
        return self.itos[len(SPECIALS):]

    def encode(self, tokens):
        unknown = [t for t in tokens if t not in self.stoi or self.stoi[t] < len(SPECIALS)]
        if unknown:
            raise UnknownTokenError(dict.fromkeys(unknown))
        return [self.stoi[t] for t in tokens]

    def decode(self, ids, strip=True):
        """Token strings for ``ids``; with ``strip`` drops PAD/BOS and stops at the first EOS."""
        out = []
        for i in ids:
            i = int(i)
            if strip:
                if i == EOS:
                    break
                if i in (PAD, BOS):
                    continue
            out.append(self.itos[i])
        return out


def tokenize(label, vocab):
    """Split ``label`` and map it to ids. BOS/EOS are added later, at pairing time."""
    toks = split_latex(label)
    try:
        return vocab.encode(toks)
    except UnknownTokenError as exc:
        raise UnknownTokenError(exc.tokens, label) from None


def detokenize(ids, vocab):
    return " ".join(vocab.decode(ids))


def build_vocab(corpus):
    """Vocabulary over every token in ``corpus`` (an iterable of label strings), sorted for stability."""
    toks = set()
    for label in corpus:
        toks.update(split_latex(label))
    return Vocabulary(sorted(toks))
