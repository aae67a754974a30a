"""Time the evaluator on a COCO-val sized synthetic workload (5000 images x 100 detections)."""

import argparse
import time

import numpy as np

from owdet.evaluation import Detection, EvalConfig, evaluate, recall_counts
from owdet.geometry import BBox
from owdet.synth import SynthSpec, gen_corpus


def workload(n_images: int, per_image: int, seed: int):
    ds, split = gen_corpus(SynthSpec(seed=seed, n_images=n_images, objects_per_image=(1, 8)))
    rng = np.random.default_rng(seed)
    dets = []
    for im in ds.images:
        gts = ds.annotations_by_image[im.id]
        # three jittered hits per object, the rest random clutter
        for g in gts:
            for _ in range(3):
                j = rng.normal(0, 4, 4)
                x1, x2 = sorted((g.box.x1 + j[0], g.box.x2 + j[2]))
                y1, y2 = sorted((g.box.y1 + j[1], g.box.y2 + j[3]))
                dets.append(Detection(im.id, BBox(x1, y1, x2, y2), float(rng.random())))
        for _ in range(per_image - 3 * len(gts)):
            x, y = rng.uniform(0, 500, 2)
            w, h = rng.uniform(5, 140, 2)
            dets.append(Detection(im.id, BBox(x, y, x + w, y + h), float(rng.random())))
    return ds, split, dets


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-images", type=int, default=5000)
    ap.add_argument("--per-image", type=int, default=100)
    ap.add_argument("--threads", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    ds, split, dets = workload(args.n_images, args.per_image, args.seed)
    print(f"{len(ds.images)} images, {len(dets)} detections, {len(ds.annotations)} GT")
    t = time.perf_counter()
    c = recall_counts(dets, ds.annotations, EvalConfig(), threads=args.threads)
    print(f"AR@100 only          {time.perf_counter() - t:6.2f}s  AR {c.ar:.4f}")
    t = time.perf_counter()
    r = evaluate(dets, ds, split, EvalConfig(), threads=args.threads, with_per_class=False)
    print(f"report               {time.perf_counter() - t:6.2f}s  AR_A {r.ar_all:.4f} AR_N {r.ar_novel:.4f}")
    t = time.perf_counter()
    evaluate(dets, ds, split, EvalConfig(), threads=args.threads)
    print(f"report + per-class   {time.perf_counter() - t:6.2f}s")


if __name__ == "__main__":
    main()
