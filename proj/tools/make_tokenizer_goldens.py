#!/usr/bin/env python3
"""Writes tests/data/tokenizer_golden.json using the reference tiktoken encoder.

Requires `pip install tiktoken`; the ranks file is read from data/ so no
network access is needed.
"""
import json
import pathlib
import random

import tiktoken
from tiktoken.load import load_tiktoken_bpe

ROOT = pathlib.Path(__file__).resolve().parent.parent
PATTERN = r"""'(?i:[sdmt]|ll|ve|re)|[^\r\n\p{L}\p{N}]?+\p{L}++|\p{N}{1,3}+| ?[^\s\p{L}\p{N}]++[\r\n]*+|\s++$|\s*[\r\n]|\s+(?!\S)|\s"""

PARAGRAPH = (
    "The rain had not stopped since Tuesday, and the narrow lane behind the mill "
    "had turned into a shallow brown river. Eleanor stood at the window of the "
    "upstairs parlour, counting the carts that tried to pass and failed. \"They'll "
    "never get through,\" she said to nobody in particular. Her brother, who was "
    "reading a week-old newspaper by the fire, did not look up. \"Then they will "
    "wait, as we all must.\" It was the sort of answer he always gave: calm, "
    "reasonable, and entirely useless. She turned from the glass and crossed the "
    "room in four quick steps. \"You might at least pretend to care about the "
    "delivery, Thomas. Mother's letters are on that cart, and the flour, and the "
    "new lamp oil.\" He folded the paper with great deliberation, first in half and "
    "then in quarters, and set it on the arm of his chair. \"I care a great deal,\" "
    "he replied. \"I simply don't see what my caring will do to the mud.\" Outside, a "
    "horse whinnied; somebody shouted an instruction that was lost in the wind. "
    "Eleanor pressed her lips together. In the eleven years since their father's "
    "death she had learned that arguments with Thomas were like walks on the moor: "
    "pleasant enough at the start, exhausting by the middle, and certain to end "
    "exactly where they began. She sat down at the small writing desk instead and "
    "drew a fresh sheet towards her. If the cart could not come to the house, then "
    "the house would go to the cart; she would send Martha down with a basket and "
    "a lantern before the light failed entirely. Thomas watched her write for a "
    "minute, then rose, sighing, and went to find his boots. \"If Martha goes, I go "
    "with her,\" he announced from the hallway, one arm already in his coat. \"The "
    "bridge is not safe after dark, whatever the miller says.\" Eleanor smiled into "
    "her letter and said nothing at all, which was, in her experience, the surest "
    "way of winning. By the time the clock struck five the three of them were "
    "picking their way down the lane, the lantern swinging, the basket bumping "
    "against Martha's knees, and the rain, at long last, beginning to ease."
)

SAMPLES = [
    "",
    "hello world",
    "Hello, World! It's 2024 -- isn't it?",
    "I'LL SEE YOU'RE GOING, WE'VE SAID. He'd've known.",
    "1234567 and 3.14159 and 1,000,000",
    "  leading spaces\n\n\ntrailing   \n",
    "tabs\there\tand\r\nwindows\r\nlines",
    "Mr. Darcy said: “I cannot.” — she replied ‘never’…",
    "naïve café résumé über Straße",
    "日本語の文章です。中文也可以。",
    "emoji \U0001F600\U0001F44D\U0001F3FD family \U0001F468‍\U0001F469‍\U0001F467",
    "code: def f(x): return x**2 # comment\n    if a<=b and c!=d: pass",
    "<SPLIT_HERE>CHAPTER I.\n\nIt is a truth universally acknowledged",
    "   \n   ",
    "!!!???...;;;",
    "x" * 300,
    "٠١٢ १२ Ⅳ numbers",
    PARAGRAPH,
]


def main():
    ranks = load_tiktoken_bpe(str(ROOT / "data" / "cl100k_base.tiktoken"))
    enc = tiktoken.Encoding(name="cl100k_golden", pat_str=PATTERN, mergeable_ranks=ranks, special_tokens={})
    rng = random.Random(20240501)
    alphabet = list("abcdefghij KLMNOP.,!?'\"\n\t0123456789-") + ["é", "’", "中", "\U0001F600", "  "]
    samples = list(SAMPLES)
    for _ in range(40):
        samples.append("".join(rng.choice(alphabet) for _ in range(rng.randint(1, 120))))
    out = [{"text": s, "ids": enc.encode_ordinary(s)} for s in samples]
    path = ROOT / "tests" / "data" / "tokenizer_golden.json"
    path.write_text(json.dumps(out, ensure_ascii=False, indent=1) + "\n", encoding="utf-8")
    print(f"wrote {len(out)} samples to {path}; paragraph: {len(PARAGRAPH)} chars, "
          f"{len(enc.encode_ordinary(PARAGRAPH))} tokens")


if __name__ == "__main__":
    main()
