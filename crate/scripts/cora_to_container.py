#!/usr/bin/env python3
"""Convert the raw LINQS Cora release (cora.content / cora.cites) into the
graph container directory read by `laplora`.

Usage: cora_to_container.py RAW_DIR OUT_DIR [--seed 0]

Split: 20 training nodes per class, 500 validation and 1000 test nodes,
drawn from a seeded shuffle of the node list (same sizes as the Planetoid
split). Nodes keep the row order of cora.content; labels are assigned in
sorted class-name order.
"""
import argparse
import json
import os
import random


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("raw_dir")
    ap.add_argument("out_dir")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    ids, feats, names = [], [], []
    with open(os.path.join(args.raw_dir, "cora.content")) as f:
        for line in f:
            parts = line.split()
            ids.append(parts[0])
            feats.append(parts[1:-1])
            names.append(parts[-1])
    index = {pid: i for i, pid in enumerate(ids)}
    classes = sorted(set(names))
    labels = [classes.index(c) for c in names]
    n = len(ids)

    edges = set()
    with open(os.path.join(args.raw_dir, "cora.cites")) as f:
        for line in f:
            a, b = line.split()
            u, v = index[a], index[b]
            if u != v:
                edges.add((min(u, v), max(u, v)))

    order = list(range(n))
    random.Random(args.seed).shuffle(order)
    train, per_class, rest = set(), {c: 0 for c in range(len(classes))}, []
    for i in order:
        if per_class[labels[i]] < 20:
            per_class[labels[i]] += 1
            train.add(i)
        else:
            rest.append(i)
    val, test = set(rest[:500]), set(rest[500:1500])

    os.makedirs(args.out_dir, exist_ok=True)
    with open(os.path.join(args.out_dir, "meta.json"), "w") as f:
        json.dump({"n_nodes": n, "n_features": len(feats[0]),
                   "n_classes": len(classes), "name": "cora"}, f)
    with open(os.path.join(args.out_dir, "edges.csv"), "w") as f:
        f.write("src,dst\n")
        for u, v in sorted(edges):
            f.write(f"{u},{v}\n")
    with open(os.path.join(args.out_dir, "features.csv"), "w") as f:
        for row in feats:
            f.write(",".join(row) + "\n")
    with open(os.path.join(args.out_dir, "labels.csv"), "w") as f:
        for y in labels:
            f.write(f"{y}\n")
    with open(os.path.join(args.out_dir, "masks.csv"), "w") as f:
        f.write("train,val,test\n")
        for i in range(n):
            f.write(f"{int(i in train)},{int(i in val)},{int(i in test)}\n")


if __name__ == "__main__":
    main()
