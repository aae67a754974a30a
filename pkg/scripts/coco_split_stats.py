"""Training-split statistics for the cumulative supercategory splits on COCO train2017.

    python scripts/coco_split_stats.py path/to/instances_train2017.json

Prints every counting convention side by side (crowd in/out, base-only vs
all annotations on retained images) next to the published reference counts.
"""

import sys

from owdet.dataset import builtin_split, load_dataset, split_stats

REFERENCE = {
    "supercat-1": (1, 64115, 609666),
    "supercat-9": (9, 74152, 654460),
    "supercat-24": (24, 92169, 715582),
    "supercat-39": (39, 93939, 727207),
    "supercat-56": (56, 107036, 824535),
    "supercat-80": (80, 117266, 860001),
}


def main() -> None:
    if len(sys.argv) != 2:
        sys.exit(__doc__)
    ds = load_dataset(sys.argv[1])
    print(f"{'split':12} {'ref':>22} {'base+crowd':>12} {'base':>8} {'image+crowd':>12} {'image':>8}")
    for name, (c, n_img, n_inst) in REFERENCE.items():
        split = builtin_split(name, ds.taxonomy)
        cols = [split_stats(ds, split, crowd, scope) for scope in ("base", "image") for crowd in (True, False)]
        flag = "" if cols[0][:2] == (c, n_img) else "  image count differs"
        print(f"{name:12} {c:3} {n_img:7} {n_inst:9}  " + " ".join(f"{x[2]:>10}" for x in cols) + flag)


if __name__ == "__main__":
    main()
