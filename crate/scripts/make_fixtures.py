#!/usr/bin/env python3
"""Regenerates the fixture bundle under fixtures/.

Everything here is written without the Rust code: the block/manifest writer,
the expected corpus counts (tallied while the sentences are built) and the
expected neutralized vectors are computed independently so the tests can use
them as oracles.

Usage: python3 scripts/make_fixtures.py [out_dir]
"""

import json
import os
import random
import struct
import sys

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
LEXICON = os.path.join(ROOT, "crates", "core", "data", "default_lexicon.tsv")

MALE_PRONOUNS = {"he", "his", "him"}
FEMALE_PRONOUNS = {"she", "her"}


def load_occupations():
    occ = []
    with open(LEXICON, encoding="utf-8") as f:
        for line in f:
            parts = line.rstrip("\n").split("\t")
            if parts[0] == "occ":
                occ.append((parts[1], parts[2]))
    return occ


OCCUPATIONS = load_occupations()
SINGLE_OCC = [(s, g) for s, g in OCCUPATIONS if " " not in s]
FILLER = [
    "the", "a", "today", "paid", "met", "quickly", "report", "office", "because",
    "and", "was", "late", "called", "about", "yesterday", "went", "home", "early",
    "asked", "for", "help", "with", "project", "it", "that", "we", "they", "saw",
]


def write_store(path, dim, layer, sentences):
    """sentences: list of (id, tokens, rows) with rows a list of float lists."""
    payload = bytearray()
    lines = [json.dumps({"dim": dim, "layer": layer, "count": len(sentences)}, separators=(",", ":"))]
    offset = 0
    for sid, tokens, rows in sentences:
        assert len(rows) == len(tokens) and all(len(r) == dim for r in rows)
        for r in rows:
            payload += struct.pack("<%df" % dim, *r)
        lines.append(json.dumps({"id": sid, "tokens": tokens, "offset": offset}, separators=(",", ":")))
        offset += len(tokens) * dim
    with open(path, "wb") as f:
        f.write(b"CEMB" + struct.pack("<III", 1, dim, 0) + bytes(payload))
    with open(path + ".manifest.jsonl", "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def corpus(rng, out):
    """200 sentences; expected counts are tallied from the parts used."""
    exp = {"male_total": 0, "female_total": 0, "mm": 0, "mf": 0, "fm": 0, "ff": 0, "tokens": 0}
    lines = []
    for i in range(200):
        words = []
        n_m = rng.choice([0, 0, 1, 1, 2])
        n_f = rng.choice([0, 0, 1, 1, 2])
        occs = [rng.choice(OCCUPATIONS) for _ in range(rng.choice([0, 1, 1, 2]))]
        if i % 17 == 0:
            occs.append(("construction worker", "M"))
        items = [("pron", rng.choice(sorted(MALE_PRONOUNS))) for _ in range(n_m)]
        items += [("pron", rng.choice(sorted(FEMALE_PRONOUNS))) for _ in range(n_f)]
        items += [("occ", s) for s, _ in occs]
        # Distractors that must not count.
        if i % 11 == 0:
            items.append(("fill", "himself"))
        if i % 13 == 0:
            items.append(("fill", "hers"))
        items += [("fill", rng.choice(FILLER)) for _ in range(rng.randint(2, 6))]
        rng.shuffle(items)
        for kind, w in items:
            for t in w.split(" "):
                if kind != "fill" and rng.random() < 0.3:
                    t = t.capitalize()
                if rng.random() < 0.1:
                    t = t + rng.choice([",", ";", ":"])
                words.append(t)
        words[-1] += "."
        if i % 7 == 0:
            words[0] = '"' + words[0]
        m_occ = sum(1 for _, g in occs if g == "M")
        f_occ = sum(1 for _, g in occs if g == "F")
        exp["male_total"] += n_m
        exp["female_total"] += n_f
        exp["mm"] += n_m * m_occ
        exp["mf"] += n_m * f_occ
        exp["fm"] += n_f * m_occ
        exp["ff"] += n_f * f_occ
        exp["tokens"] += len(words)
        lines.append(" ".join(words))
    with open(os.path.join(out, "corpus.txt"), "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    expected = {
        "male_total": exp["male_total"],
        "female_total": exp["female_total"],
        "cooc": {
            "male_with_male_biased": exp["mm"],
            "male_with_female_biased": exp["mf"],
            "female_with_male_biased": exp["fm"],
            "female_with_female_biased": exp["ff"],
        },
        "sentences_seen": 200,
        "tokens_seen": exp["tokens"],
    }
    with open(os.path.join(out, "corpus_expected.json"), "w", encoding="utf-8") as f:
        json.dump(expected, f, indent=2)
        f.write("\n")


MALE_NAMES = ["John", "Peter", "Mark", "Paul", "David"]
FEMALE_NAMES = ["Mary", "Susan", "Linda", "Karen", "Alice"]


def conll_docs(rng, out):
    """20 six-column documents. Possessive `his`/`her` are tagged PRP$ and no
    `hers` appears, so every pronoun swaps within the counted sets."""
    subj = {"M": "he", "F": "she"}
    poss = {"M": "his", "F": "her"}
    obj = {"M": "him", "F": "her"}
    lines = []
    totals = {"M": 0, "F": 0}
    for d in range(20):
        doc_id = "fx%04d" % d
        g = "M" if d % 3 else "F"
        name = rng.choice(MALE_NAMES if g == "M" else FEMALE_NAMES)
        sents = []
        # (word, pos, ner, in_cluster)
        sents.append([(name, "NNP", "(PERSON)", True), ("said", "VBD", "*", False),
                      (subj[g], "PRP", "*", True), ("left", "VBD", "*", False),
                      ("early", "RB", "*", False), (".", ".", "*", False)])
        for _ in range(rng.randint(1, 3)):
            occ = rng.choice(SINGLE_OCC)[0]
            kind = rng.choice(["poss", "obj", "plain"])
            if kind == "poss":
                sents.append([(poss[g].capitalize(), "PRP$", "*", True), ("brother", "NN", "*", False),
                              ("called", "VBD", "*", False), ("the", "DT", "*", False),
                              (occ, "NN", "*", False), (".", ".", "*", False)])
            elif kind == "obj":
                sents.append([("The", "DT", "*", False), (occ, "NN", "*", False),
                              ("thanked", "VBD", "*", False), (obj[g], "PRP", "*", True),
                              (".", ".", "*", False)])
            else:
                sents.append([("The", "DT", "*", False), (occ, "NN", "*", False),
                              ("arrived", "VBD", "*", False), (".", ".", "*", False)])
        lines.append("#begin document (%s); part 000" % doc_id)
        for s in sents:
            for i, (w, pos, ner, c) in enumerate(s):
                lines.append("\t".join([doc_id, str(i), w, pos, ner, "(0)" if c else "-"]))
                lw = w.lower()
                if lw in MALE_PRONOUNS:
                    totals["M"] += 1
                elif lw in FEMALE_PRONOUNS:
                    totals["F"] += 1
            lines.append("")
        lines.append("#end document")
    with open(os.path.join(out, "docs.conll"), "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    with open(os.path.join(out, "docs_expected.json"), "w", encoding="utf-8") as f:
        json.dump({"documents": 20, "male_pronouns": totals["M"], "female_pronouns": totals["F"]}, f, indent=2)
        f.write("\n")


def dyadic(rng, scale=64, span=64):
    return rng.randint(-span, span) / scale


def pair_stores(rng, out, dim=16):
    """Original/swapped stores. Every value is a small dyadic rational, so the
    half-sums below are exact in float32."""
    swap = {"he": "she", "she": "he", "him": "her", "her": "him", "his": "her"}
    c_dir = [dyadic(rng) for _ in range(dim)]
    o_dir = [dyadic(rng) for _ in range(dim)]
    vocab = {}

    def base(tok):
        if tok not in vocab:
            vocab[tok] = [dyadic(rng) for _ in range(dim)]
        return vocab[tok]

    a_rows, b_rows, n_rows, targets = [], [], [], []
    for i in range(120):
        occ, stereo = rng.choice(SINGLE_OCC)
        g = rng.choice("MF")
        pron = "he" if g == "M" else "she"
        obj = "him" if g == "M" else "her"
        tokens_a = ["the", occ, "said", "that", pron, "would", "call", obj, "tomorrow"]
        tokens_b = [swap.get(t, t) for t in tokens_a]
        sa = 1 if g == "M" else -1
        t = 1 if stereo == "M" else -1
        rows_a, rows_b = [], []
        for j, (ta, tb) in enumerate(zip(tokens_a, tokens_b)):
            noise_a = [rng.randint(-4, 4) / 1024 for _ in range(dim)]
            noise_b = [rng.randint(-4, 4) / 1024 for _ in range(dim)]
            va, vb = list(base(ta)), list(base(tb))
            if j == 1:
                va = [x + sa * (c + 0.5 * t * o) for x, c, o in zip(va, c_dir, o_dir)]
                vb = [x - sa * (c + 0.5 * t * o) for x, c, o in zip(vb, c_dir, o_dir)]
            rows_a.append([x + e for x, e in zip(va, noise_a)])
            rows_b.append([x + e for x, e in zip(vb, noise_b)])
        sid = "p%03d" % i
        for r in rows_a + rows_b:
            for x in r:
                assert struct.unpack("<f", struct.pack("<f", x))[0] == x
        a_rows.append((sid, tokens_a, rows_a))
        b_rows.append((sid, tokens_b, rows_b))
        n_rows.append((sid, tokens_a, [[(x + y) / 2 for x, y in zip(ra, rb)] for ra, rb in zip(rows_a, rows_b)]))
        targets.append({"sentence_id": sid, "token_index": 1})
    write_store(os.path.join(out, "pairs_a.cemb"), dim, "top", a_rows)
    write_store(os.path.join(out, "pairs_b.cemb"), dim, "top", b_rows)
    write_store(os.path.join(out, "neutral_expected.cemb"), dim, "top", n_rows)
    with open(os.path.join(out, "targets.jsonl"), "w", encoding="utf-8") as f:
        for t in targets:
            f.write(json.dumps(t, separators=(",", ":")) + "\n")


def probe_store(rng, out, dim=16):
    """Mentions whose target vector carries a gender signal along one random
    direction. The male magnitude is twice the female one under a fixed norm
    budget, so the remaining context noise along that direction is smaller
    for male contexts."""
    direction = [rng.gauss(0, 1) for _ in range(dim)]
    norm = sum(x * x for x in direction) ** 0.5
    direction = [x / norm for x in direction]
    sentences, rows = [], []
    for i in range(160):
        g = "M" if i % 2 == 0 else "F"
        occ = rng.choice(SINGLE_OCC)[0]
        pron = "he" if g == "M" else "she"
        tokens = ["the", occ, "said", pron, "was", "late"]
        sign, a = (1.0, 0.8) if g == "M" else (-1.0, 0.4)
        vecs = []
        for j in range(len(tokens)):
            v = [rng.gauss(0, 0.3) for _ in range(dim)]
            if j == 1:
                along = sum(x * d for x, d in zip(v, direction))
                coeff = sign * a + (1 - a * a) ** 0.5 * 0.4 * rng.gauss(0, 1)
                v = [x + (coeff - along) * d for x, d in zip(v, direction)]
            vecs.append([struct.unpack("<f", struct.pack("<f", x))[0] for x in v])
        sid = "q%03d" % i
        sentences.append((sid, tokens, vecs))
        rows.append({"store": "probe.cemb", "sentence_id": sid, "token_index": 1, "gender": g})
    write_store(os.path.join(out, "probe.cemb"), dim, "top", sentences)
    with open(os.path.join(out, "probe.jsonl"), "w", encoding="utf-8") as f:
        for r in rows:
            f.write(json.dumps(r, separators=(",", ":")) + "\n")


def corrupt_stores(out):
    d = os.path.join(out, "corrupt")
    os.makedirs(d, exist_ok=True)
    good_rows = [("s1", ["a", "b"], [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])]
    expected = {}

    def emit(name, header, payload, manifest, kind):
        path = os.path.join(d, name)
        with open(path, "wb") as f:
            f.write(header + payload)
        with open(path + ".manifest.jsonl", "w", encoding="utf-8") as f:
            f.write(manifest)
        expected[name] = kind

    payload = struct.pack("<6f", 1, 2, 3, 4, 5, 6)
    manifest = '{"dim":3,"layer":"top","count":1}\n{"id":"s1","tokens":["a","b"],"offset":0}\n'
    emit("bad_magic.cemb", b"CEMX" + struct.pack("<III", 1, 3, 0), payload, manifest, "corrupt_header")
    emit("bad_version.cemb", b"CEMB" + struct.pack("<III", 2, 3, 0), payload, manifest, "corrupt_header")
    emit("bad_reserved.cemb", b"CEMB" + struct.pack("<III", 1, 3, 7), payload, manifest, "corrupt_header")
    emit("zero_dim.cemb", b"CEMB" + struct.pack("<III", 1, 0, 0), payload, manifest, "corrupt_header")
    emit("short_header.cemb", b"CEMB" + struct.pack("<I", 1), b"", manifest, "corrupt_header")
    emit("dim_mismatch.cemb", b"CEMB" + struct.pack("<III", 1, 2, 0), payload, manifest, "inconsistent")
    emit("truncated_payload.cemb", b"CEMB" + struct.pack("<III", 1, 3, 0), payload[:20], manifest, "inconsistent")
    emit("bad_offset.cemb", b"CEMB" + struct.pack("<III", 1, 3, 0), payload,
         manifest.replace('"offset":0', '"offset":3'), "inconsistent")
    emit("bad_count.cemb", b"CEMB" + struct.pack("<III", 1, 3, 0), payload,
         manifest.replace('"count":1', '"count":2'), "inconsistent")
    with open(os.path.join(d, "expected.json"), "w", encoding="utf-8") as f:
        json.dump(expected, f, indent=2, sort_keys=True)
        f.write("\n")
    del good_rows


def winobias(rng, out):
    d = os.path.join(out, "winobias")
    os.makedirs(d, exist_ok=True)
    males = [s for s, g in SINGLE_OCC if g == "M"]
    females = [s for s, g in SINGLE_OCC if g == "F"]
    pro, anti, pred_pro, pred_anti = [], [], [], []
    for i in range(1, 41):
        m, f = rng.choice(males), rng.choice(females)
        if i % 2:
            occ_first, occ_second = m, f
            pro_pron, anti_pron = "he", "she"
        else:
            occ_first, occ_second = f, m
            pro_pron, anti_pron = "she", "he"
        # Tokens: The X asked the Y for help because PRON was busy .
        for lines, pron in ((pro, pro_pron), (anti, anti_pron)):
            lines.append("%d [The %s] asked the %s for help because [%s] was busy ." % (i, occ_first, occ_second, pron))
        gold = [[[0, 1], [8, 8]]]
        wrong = [[[3, 4], [8, 8]]]
        pred_pro.append({"instance_id": str(i), "clusters": gold if i % 10 else wrong})
        pred_anti.append({"instance_id": str(i), "clusters": gold if i % 2 else wrong})
    for name, lines in (("pro.txt", pro), ("anti.txt", anti)):
        with open(os.path.join(d, name), "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")
    for name, preds in (("pred_pro.jsonl", pred_pro), ("pred_anti.jsonl", pred_anti)):
        with open(os.path.join(d, name), "w", encoding="utf-8") as f:
            for p in preds:
                f.write(json.dumps(p, separators=(",", ":")) + "\n")


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else os.path.join(ROOT, "fixtures")
    os.makedirs(out, exist_ok=True)
    corpus(random.Random(1), out)
    conll_docs(random.Random(2), out)
    pair_stores(random.Random(3), out)
    probe_store(random.Random(4), out)
    corrupt_stores(out)
    winobias(random.Random(5), out)


if __name__ == "__main__":
    main()
