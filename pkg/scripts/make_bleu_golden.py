"""Generate the BLEU conformance goldens with sacrebleu (run once; output is committed).

    pip install sacrebleu
    python3 scripts/make_bleu_golden.py tests/data/bleu_golden.json
"""

import json
import random
import sys

import sacrebleu
from sacrebleu.tokenizers.tokenizer_13a import Tokenizer13a

WORDS = ("the a cat dog sat on mat quickly red blue runs ran , . ! ? it's \"quoted\" "
         "(paren) 3.14 1,000 co-op U.S. e-mail $5 50% x-y a/b <tag> &amp; ...").split()


def sentence(rng, n):
    return " ".join(rng.choice(WORDS) for _ in range(n))


def perturb(rng, ref):
    toks = ref.split()
    out = []
    for t in toks:
        r = rng.random()
        if r < 0.15:
            continue
        out.append(rng.choice(WORDS) if r < 0.35 else t)
        if rng.random() < 0.1:
            out.append(rng.choice(WORDS))
    return " ".join(out)


def main(path):
    rng = random.Random(1234)
    corpora = []
    for k in range(20):
        n = rng.randint(1, 12)
        refs = [sentence(rng, rng.randint(1, 15)) for _ in range(n)]
        if k == 0:
            hyps = list(refs)
        elif k == 1:
            hyps = ["zzz" for _ in refs]
        else:
            hyps = [perturb(rng, r) for r in refs]
        res = sacrebleu.corpus_bleu(hyps, [refs], smooth_method="floor", smooth_value=1e-9,
                                    tokenize="13a")
        corpora.append({"hyps": hyps, "refs": refs, "bleu": res.score,
                        "sys_len": res.sys_len, "ref_len": res.ref_len,
                        "counts": list(res.counts), "totals": list(res.totals)})
    tok = Tokenizer13a()
    lines = ["Hello, world!", "It's 3.14 or 1,000.", "a-b 5-6 x/y", "&quot;hi&quot; &amp; &lt;b&gt;",
             "end.", "(paren) [br] {c}", "$5 50% #tag @me", "U.S.A. e.g. etc.", "trailing-\nline"]
    lines += [sentence(rng, 8) for _ in range(20)]
    data = {"signature": str(sacrebleu.__version__), "corpora": corpora,
            "tokenize_13a": [{"in": s, "out": tok(s)} for s in lines]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=1, ensure_ascii=False)
        fh.write("\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/data/bleu_golden.json")
