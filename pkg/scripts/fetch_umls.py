"""Materialise the UMLS benchmark in OpenKE layout under ``data/umls``.

The triples are taken from the copy bundled inside the ``pykeen`` wheel (no
pykeen import needed; the wheel is only unpacked).  Usage::

    python scripts/fetch_umls.py [--wheel path/to/pykeen.whl] [--out data/umls]
"""

import argparse
import glob
import os
import subprocess
import sys
import tempfile
import zipfile

from liftkge.data import KnowledgeGraph, save_dataset

SPLITS = ("train", "valid", "test")


def read_wheel(wheel):
    rows = {}
    with zipfile.ZipFile(wheel) as z:
        for s in SPLITS:
            text = z.read(f"pykeen/datasets/umls/{s}.txt").decode("utf-8")
            rows[s] = [tuple(line.split("\t")) for line in text.splitlines() if line.strip()]
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--wheel")
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data", "umls"))
    args = ap.parse_args(argv)
    wheel = args.wheel
    if wheel is None:
        tmp = tempfile.mkdtemp()
        subprocess.check_call(
            [sys.executable, "-m", "pip", "download", "--no-deps", "pykeen==1.11.1", "-d", tmp, "-q"]
        )
        wheel = glob.glob(os.path.join(tmp, "pykeen-*.whl"))[0]
    rows = read_wheel(wheel)
    ents = sorted({x for split in rows.values() for h, _, t in split for x in (h, t)})
    rels = sorted({r for split in rows.values() for _, r, _ in split})
    eid = {n: i for i, n in enumerate(ents)}
    rid = {n: i for i, n in enumerate(rels)}
    kg = KnowledgeGraph(
        len(ents),
        len(rels),
        entity_names=tuple(ents),
        relation_names=tuple(rels),
        **{s: [(eid[h], rid[r], eid[t]) for h, r, t in rows[s]] for s in SPLITS},
    )
    save_dataset(kg, args.out)
    print(f"wrote {args.out}: |E|={kg.entity_count} |R|={kg.relation_count} "
          f"train/valid/test={len(kg.train)}/{len(kg.valid)}/{len(kg.test)}")


if __name__ == "__main__":
    main()
