#!/usr/bin/env python3
"""Build a line-oriented public-domain LM corpus (train.txt / dev.txt).

Sources:
  * King James Bible verses JSON (npm package ``kjv``, json/verses-1769.json)
  * Shakespeare plays, Project Gutenberg editions (PyPI package ``shakespeare``,
    shksprdata/texts/*_gut.txt)

Documents are KJV chapters and Shakespeare plays. Each document becomes one
block of lines; blocks are separated by a blank line. A seeded 10% of the
documents is written to dev.txt, the rest to train.txt.
"""

import argparse
import json
import pathlib
import random
import re


def kjv_documents(verses_path):
    with open(verses_path, encoding="utf-8") as fh:
        verses = json.load(fh)
    chapters = {}
    order = []
    for ref, text in verses.items():
        book_chapter = ref.rsplit(":", 1)[0]
        if book_chapter not in chapters:
            chapters[book_chapter] = []
            order.append(book_chapter)
        text = text.replace("[", "").replace("]", "")
        text = re.sub(r"^#\s*", "", text).strip()
        if text:
            chapters[book_chapter].append(text)
    return [chapters[c] for c in order]


def gutenberg_body(text):
    lines = text.splitlines()
    start, end = 0, len(lines)
    for i, line in enumerate(lines):
        if "*** START OF" in line or "*END*THE SMALL PRINT" in line:
            start = i + 1
        if "*** END OF" in line or "End of the Project Gutenberg" in line \
                or "End of Project Gutenberg" in line:
            end = i
            break
    return lines[start:end]


def shakespeare_documents(texts_dir):
    docs = []
    for path in sorted(pathlib.Path(texts_dir).glob("*_gut.txt")):
        raw = path.read_text(encoding="latin-1")
        body = [l.strip() for l in gutenberg_body(raw)]
        body = [l for l in body if l]
        if body:
            docs.append(body)
    return docs


def main():
    ap = argparse.ArgumentParser(description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--kjv", required=True, help="path to verses-1769.json")
    ap.add_argument("--shakespeare", help="directory with *_gut.txt plays")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--dev-fraction", type=float, default=0.1)
    ap.add_argument("--seed", type=int, default=1234)
    args = ap.parse_args()

    docs = kjv_documents(args.kjv)
    if args.shakespeare:
        docs += shakespeare_documents(args.shakespeare)

    rng = random.Random(args.seed)
    n_dev = max(1, int(round(len(docs) * args.dev_fraction)))
    dev_ids = set(rng.sample(range(len(docs)), n_dev))

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    counts = {}
    for name, keep in (("train.txt", lambda i: i not in dev_ids),
                       ("dev.txt", lambda i: i in dev_ids)):
        selected = [d for i, d in enumerate(docs) if keep(i)]
        with open(out / name, "w", encoding="utf-8") as fh:
            fh.write("\n\n".join("\n".join(d) for d in selected))
            fh.write("\n")
        counts[name] = (len(selected), sum(len(l.split()) for d in selected for l in d))
    for name, (n, words) in counts.items():
        print(f"{name}: {n} documents, {words} whitespace words")


if __name__ == "__main__":
    main()
