#!/usr/bin/env python3
"""Rebuild the native MovieLens 100K directory layout from the copy of the
dataset bundled in the RecBole wheel (recbole/dataset_example/ml-100k).

Writes u.data, u.user, u.item, u.genre, u.occupation and the five
u{1..5}.base / u{1..5}.test fold files. Folds follow the distribution's
mku.sh: fold i tests on lines (i-1)*20000+1 .. i*20000 of u.data, trains on
the rest, and both files are sorted by (user, movie).

The RecBole copy keeps u.data's original line order, every user field and
the genre flags. Release dates and IMDb URLs are not kept there; the
rebuilt u.item writes "01-Jan-<year>" and an empty URL. hbgnn reads only the
movie id and the genre flags from u.item.

usage: rebuild_ml100k.py [--wheel PATH] [--out DIR]
"""

import argparse
import glob
import os
import subprocess
import sys
import tempfile
import zipfile

GENRES = [
    "unknown", "Action", "Adventure", "Animation", "Children's", "Comedy",
    "Crime", "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror",
    "Musical", "Mystery", "Romance", "Sci-Fi", "Thriller", "War", "Western",
]
PREFIX = "recbole/dataset_example/ml-100k/ml-100k."


def find_wheel(explicit):
    if explicit:
        return explicit
    tmp = tempfile.mkdtemp(prefix="recbole-")
    subprocess.check_call(
        [sys.executable, "-m", "pip", "download", "--no-deps", "recbole==1.2.1", "-d", tmp],
        stdout=subprocess.DEVNULL,
    )
    return glob.glob(os.path.join(tmp, "recbole-*.whl"))[0]


def rows(z, kind):
    text = z.read(PREFIX + kind).decode("latin-1")
    return [line.split("\t") for line in text.splitlines()[1:] if line]


def write(path, lines):
    with open(path, "w", encoding="latin-1", newline="\n") as f:
        for line in lines:
            f.write(line + "\n")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--wheel")
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data", "ml-100k"))
    args = ap.parse_args()

    z = zipfile.ZipFile(find_wheel(args.wheel))
    os.makedirs(args.out, exist_ok=True)

    ratings = ["\t".join([u, i, r, t.split(".")[0]]) for u, i, r, t in rows(z, "inter")]
    assert len(ratings) == 100000, len(ratings)
    write(os.path.join(args.out, "u.data"), ratings)

    users = rows(z, "user")
    write(os.path.join(args.out, "u.user"), ["|".join(u) for u in users])
    write(os.path.join(args.out, "u.occupation"), sorted({u[3] for u in users}))

    items = []
    for item_id, title, year, classes in rows(z, "item"):
        active = set(classes.split(" "))
        unknown_gaps = [g for g in active if g not in GENRES]
        assert not unknown_gaps, unknown_gaps
        flags = ["1" if g in active else "0" for g in GENRES]
        if year.isdigit():
            name, date = f"{title} ({year})", f"01-Jan-{year}"
        else:
            name, date = "unknown", ""
        items.append("|".join([item_id, name, date, "", ""] + flags))
    write(os.path.join(args.out, "u.item"), items)
    write(os.path.join(args.out, "u.genre"), [f"{g}|{k}" for k, g in enumerate(GENRES)])

    def key(line):
        f = line.split("\t")
        return (int(f[0]), int(f[1]))

    for fold in range(1, 6):
        lo, hi = (fold - 1) * 20000, fold * 20000
        test = sorted(ratings[lo:hi], key=key)
        base = sorted(ratings[:lo] + ratings[hi:], key=key)
        write(os.path.join(args.out, f"u{fold}.test"), test)
        write(os.path.join(args.out, f"u{fold}.base"), base)

    print(f"wrote {args.out}: {len(ratings)} ratings, {len(users)} users, {len(items)} movies")


if __name__ == "__main__":
    main()
