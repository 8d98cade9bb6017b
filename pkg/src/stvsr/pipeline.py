"""End-to-end operations behind the command line: inference, training, evaluation, pseudo-label dumps."""

import csv
import json
from pathlib import Path

import numpy as np
import torch

from ._validation import check_rate
from .data import FrameSequence, ingest, list_images, read_image, write_image
from .estimator import SpaceTimeSR
from .flow_estimator import TVL1FlowEstimator
from .metrics import psnr, psnr_y, ssim
from .pseudo_label import expand_patches, make_pseudo_label

KINDS = ("existing", "interpolated")


def load_estimator(checkpoint=None, seed=0):
    """Estimator from a checkpoint file, or an untrained one when ``checkpoint`` is None."""
    if checkpoint is None:
        return SpaceTimeSR(seed=seed).init_model()
    return SpaceTimeSR.load(checkpoint)


def iter_inference(seq, rate, scale_h, scale_w=None, estimator=None):
    """Yield ``(index, timestamp, frame)`` one output frame at a time."""
    seq = seq if isinstance(seq, FrameSequence) else FrameSequence(seq)
    estimator = estimator or load_estimator()
    ts = seq.timestamps
    for index, pos, frame in estimator.iter_predict(seq.frames, rate, scale_h, scale_w):
        i = int(pos)
        stamp = ts[i] if i == len(ts) - 1 else ts[i] + (pos - i) * (ts[i + 1] - ts[i])
        yield index, float(stamp), frame


def run_inference(seq, rate, scale_h, scale_w=None, estimator=None):
    """Upscale ``seq`` to ``rate * (N - 1) + 1`` frames of ``ceil(H * S)`` pixels."""
    seq = seq if isinstance(seq, FrameSequence) else FrameSequence(seq)
    out = list(iter_inference(seq, rate, scale_h, scale_w, estimator))
    frames = np.stack([f for _, _, f in out])
    return FrameSequence(frames, [s for _, s, _ in out], seq.source_path)


def infer_to_dir(seq, out_dir, rate, scale_h, scale_w=None, estimator=None):
    out_dir = Path(out_dir)
    n = 0
    for index, _, frame in iter_inference(seq, rate, scale_h, scale_w, estimator):
        write_image(frame, out_dir / f"frame_{index:04d}.png")
        n += 1
    return n


# -- training ------------------------------------------------------------

def load_clips(data_root):
    """Every sub-folder of ``data_root`` holding images is one clip (or the root itself)."""
    root = Path(data_root)
    if not root.is_dir():
        raise ValueError(f"dataset root {root} is not a directory")
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and list_images(p))
    if not dirs:
        if list_images(root):
            dirs = [root]
        else:
            raise ValueError(f"no clips found under {root}")
    return [ingest(d) for d in dirs]


def write_loss_log(log, path):
    fields = ["iteration", "loss_exist", "loss_inter", "loss_total", "lr", "scale"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(log)


def train(params, data_root, out_dir):
    """Fit a :class:`SpaceTimeSR` with ``params`` on the clips under ``data_root``.

    Writes ``model.ckpt`` and ``loss_log.csv`` into ``out_dir``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    est = SpaceTimeSR(**params)
    est.fit(load_clips(data_root))
    est.save(out_dir / "model.ckpt")
    write_loss_log(est.loss_log_, out_dir / "loss_log.csv")
    return est


# -- evaluation ----------------------------------------------------------

def _sequence_tree(root):
    root = Path(root)
    if not root.is_dir():
        raise ValueError(f"{root} is not a directory")
    tree = {p.name: [f.name for f in list_images(p)] for p in sorted(root.iterdir()) if p.is_dir()}
    tree = {k: v for k, v in tree.items() if v}
    if not tree and list_images(root):
        tree = {".": [f.name for f in list_images(root)]}
    return tree


def _aggregate(rows):
    out = {"n_frames": len(rows)}
    for key in ("psnr", "psnr_y", "ssim"):
        out[key] = float(np.mean([r[key] for r in rows])) if rows else float("nan")
    return out


def evaluate(pred_root, gt_root, rate=2):
    """Per-frame and aggregate PSNR/SSIM of matching sequence trees.

    A sequence is a folder of frames (or the root itself); frame ``i`` is
    ``existing`` when ``i % rate == 0`` and ``interpolated`` otherwise.
    """
    rate = check_rate(rate)
    pred_tree, gt_tree = _sequence_tree(pred_root), _sequence_tree(gt_root)
    missing = []
    for seq, frames in gt_tree.items():
        if seq not in pred_tree:
            missing.append(f"{seq}/")
            continue
        have = set(pred_tree[seq])
        missing.extend(f"{seq}/{f}" for f in frames if f not in have)
    if missing:
        raise ValueError(f"prediction tree is missing {len(missing)} entries: {', '.join(missing)}")
    rows = []
    for seq, frames in gt_tree.items():
        for i, name in enumerate(frames):
            gt = read_image(Path(gt_root) / seq / name)
            pred = read_image(Path(pred_root) / seq / name)
            if pred.shape != gt.shape:
                raise ValueError(f"{seq}/{name}: prediction {pred.shape} vs ground truth {gt.shape}")
            rows.append({
                "sequence": seq, "frame_index": i,
                "kind": KINDS[0] if i % rate == 0 else KINDS[1],
                "psnr": psnr(pred, gt), "psnr_y": psnr_y(pred, gt), "ssim": ssim(pred, gt),
            })
    aggregate = {"all": _aggregate(rows)}
    for kind in KINDS:
        aggregate[kind] = _aggregate([r for r in rows if r["kind"] == kind])
    return {"frames": rows, "aggregate": aggregate}


def write_report(report, path=None):
    """JSON lines: one object per frame, then one per aggregate group."""
    lines = [json.dumps(r) for r in report["frames"]]
    lines += [json.dumps({"aggregate": k, **v}) for k, v in report["aggregate"].items()]
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


# -- pseudo labels -------------------------------------------------------

def pseudo_dump(seq, out_dir, pair=0, rate=2, patch_size=4, estimator=None, scale=4.0):
    """Write the pseudo label of the first intermediate frame of one pair.

    ``seq`` is an HR sequence; its frames ``pair * rate`` and
    ``(pair + 1) * rate`` are the references. The prediction is the model's
    output for the degraded sequence when ``estimator`` is given, otherwise the
    linear time blend of the references.
    """
    from .data import degrade, ground_truth

    seq = seq if isinstance(seq, FrameSequence) else FrameSequence(seq)
    rate = check_rate(rate)
    a, b = pair * rate, (pair + 1) * rate
    if rate < 2 or b >= len(seq):
        raise ValueError(f"pair {pair} at rate {rate} needs frames {a} and {b}, sequence has {len(seq)}")
    t = 1.0 / rate
    if estimator is not None:
        gts, _ = ground_truth(seq, scale, scale, rate)
        pred = estimator.predict(degrade(seq, scale, scale, rate), rate, scale, scale)[a + 1]
        i0, i1 = gts[a], gts[b]
    else:
        i0, i1 = seq.frames[a], seq.frames[b]
        pred = (1 - t) * i0 + t * i1
    i0, i1, pred = (torch.from_numpy(np.ascontiguousarray(x))[None] for x in (i0, i1, pred))
    flow = TVL1FlowEstimator()
    v01, v10 = flow(i0, i1), flow(i1, i0)
    pseudo, source = make_pseudo_label(i0, i1, pred, v01, v10, t, patch_size, return_source=True)
    out_dir = Path(out_dir)
    write_image(pseudo[0].numpy(), out_dir / "pseudo.png")
    write_image(pred[0].numpy(), out_dir / "prediction.png")
    src_map = expand_patches(source.float(), patch_size, pred.shape[-2:])[0]
    write_image(src_map.numpy(), out_dir / "source.png")
    summary = {
        "pair": pair, "t": t, "patch_size": patch_size,
        "patches": int(source.numel()),
        "from_frame0": int((source == 0).sum()), "from_frame1": int((source == 1).sum()),
    }
    (out_dir / "pseudo.json").write_text(json.dumps(summary, indent=1))
    return summary
