#!/usr/bin/env python3
"""End-to-end checks of the densetarget CLI: exit codes, output files,
determinism, and the documented JSON schemas."""

import filecmp
import json
import struct
import subprocess
import sys
import tempfile
from pathlib import Path

CLI = Path(sys.argv[1]) if len(sys.argv) > 1 else None
FAILURES = []


def check(name, cond, detail=""):
    status = "ok" if cond else "FAIL"
    print(f"  {status}  {name}" + (f" ({detail})" if detail and not cond else ""))
    if not cond:
        FAILURES.append(name)


def run(*args, cwd=None):
    return subprocess.run([str(CLI), *args], capture_output=True, text=True, cwd=cwd)


def read_dtr(path):
    raw = Path(path).read_bytes()
    magic, h, w, tag = struct.unpack("<4sIII", raw[:16])
    assert magic == b"DTR1" and tag == 0
    return h, w, struct.unpack(f"<{h * w}f", raw[16:])


def same_tree(a, b):
    fa = sorted(p.relative_to(a) for p in Path(a).rglob("*") if p.is_file())
    fb = sorted(p.relative_to(b) for p in Path(b).rglob("*") if p.is_file())
    if fa != fb:
        return False
    return all(filecmp.cmp(a / p, b / p, shallow=False) for p in fa)


def main():
    if CLI is None or not CLI.exists():
        print(f"usage: {sys.argv[0]} <densetarget binary>")
        return 1

    tmp = Path(tempfile.mkdtemp(prefix="dt_cli_"))
    spec = tmp / "spec.json"
    spec.write_text(json.dumps({"n_train": 4, "n_val": 2, "n_test": 2}))

    print("gen-synthetic")
    ds = tmp / "ds"
    r = run("gen-synthetic", "--spec", str(spec), "--out", str(ds))
    check("exit 0", r.returncode == 0, r.stderr)
    check("annotations written", all((ds / f"{s}.json").exists() for s in ("train", "val", "test")))
    check("effective config echoed", (ds / "effective_config.json").exists())
    cfg = json.loads((ds / "effective_config.json").read_text())
    check("config merges spec over defaults", cfg["n_train"] == 4 and cfg["image_h"] == 64)
    h, w, px = read_dtr(ds / "images" / "train_0.dtr")
    check("raster shape and range", h == 64 and w == 64 and all(0 <= v <= 1 for v in px))

    ds2 = tmp / "ds2"
    run("gen-synthetic", "--spec", str(spec), "--out", str(ds2))
    check("byte-deterministic", same_tree(ds, ds2))

    bad_spec = tmp / "bad_spec.json"
    bad_spec.write_text(json.dumps({"fill": 0.95, "jitter": 0.2}))
    r = run("gen-synthetic", "--spec", str(bad_spec), "--out", str(tmp / "bad"))
    check("invalid spec exits 2", r.returncode == 2, f"rc={r.returncode}")

    print("gen-targets")
    maps = tmp / "maps"
    r = run("gen-targets", "--annotations", str(ds / "train.json"), "--out", str(maps))
    check("exit 0", r.returncode == 0, r.stderr)
    h, w, px = read_dtr(maps / "target_0.dtr")
    check("half-resolution map", h == 32 and w == 32)
    check("max-mode bounded", max(px) <= 1.0 + 1e-6 and max(px) > 0.5)
    r = run("gen-targets", "--annotations", str(tmp / "nope.json"), "--out", str(maps))
    check("missing annotations exits 2", r.returncode == 2, f"rc={r.returncode}")

    print("train-toy")
    out = tmp / "run"
    r = run("train-toy", "--dataset", str(ds), "--kind", "gln", "--seed", "3",
            "--epochs", "2", "--out", str(out))
    check("exit 0", r.returncode == 0, r.stderr)
    check("reports val/test ap", "val_ap50=" in r.stdout and "test_ap50=" in r.stdout)
    log = (out / "log.csv").read_text().splitlines()
    check("log header", log[0] == "epoch,loss_total,loss_cls,loss_reg,loss_gl,val_ap50")
    check("one row per epoch", len(log) == 3)
    check("checkpoint written", any((out / "checkpoint").iterdir()))
    check("test metrics json", "ap50" in json.loads((out / "test_metrics.json").read_text()))

    cfgfile = tmp / "train_cfg.json"
    cfgfile.write_text(json.dumps({"epochs": 1, "lr": 0.005}))
    out2 = tmp / "run2"
    r = run("train-toy", "--dataset", str(ds), "--kind", "baseline", "--seed", "3",
            "--config", str(cfgfile), "--out", str(out2))
    check("config file sets epochs", r.returncode == 0 and
          len((out2 / "log.csv").read_text().splitlines()) == 2)
    echoed = json.loads((out2 / "effective_config.json").read_text())
    check("flags>config precedence recorded", echoed["epochs"] == 1 and echoed["lr"] == 0.005)

    print("eval")
    ann = json.loads((ds / "test.json").read_text())
    dets = [{"image_id": a["image_id"], "box": a["bbox"], "score": 0.9}
            for a in ann["annotations"]]
    det_path = tmp / "dets.json"
    det_path.write_text(json.dumps(dets))
    report = tmp / "report.json"
    r = run("eval", "--detections", str(det_path), "--annotations", str(ds / "test.json"),
            "--report", str(report))
    check("exit 0", r.returncode == 0, r.stderr)
    check("perfect detections score 1.0 everywhere",
          r.stdout.strip() == "1.000000,1.000000,1.000000,1.000000,1.000000", r.stdout)
    check("report breakdown", len(json.loads(report.read_text())["breakdown"]) == 10)

    r = run("eval", "--detections", str(tmp / "nope.json"), "--annotations", str(ds / "test.json"))
    check("missing detections exits 2", r.returncode == 2, f"rc={r.returncode}")
    bad_dets = tmp / "bad_dets.json"
    bad_dets.write_text(json.dumps([{"image_id": 999, "box": [0, 0, 5, 5], "score": 0.5}]))
    r = run("eval", "--detections", str(bad_dets), "--annotations", str(ds / "test.json"))
    check("unknown image id exits 2", r.returncode == 2, f"rc={r.returncode}")

    print("convert-coco")
    coco = tmp / "coco.json"
    coco.write_text(json.dumps({
        "images": [{"id": 1, "width": 100, "height": 80, "file_name": "a.dtr"}],
        "annotations": [{"image_id": 1, "bbox": [10, 20, 30, 40]}],
    }))
    conv = tmp / "converted.json"
    r = run("convert-coco", "--in", str(coco), "--out", str(conv))
    check("exit 0", r.returncode == 0, r.stderr)
    out_ann = json.loads(conv.read_text())
    check("xywh becomes corners", out_ann["annotations"][0]["bbox"] == [10, 20, 40, 60])

    print("misc")
    r = run()
    check("missing subcommand is an error", r.returncode != 0)
    r = run("train-toy", "--dataset", str(ds), "--kind", "mystery")
    check("unknown kind rejected", r.returncode != 0)

    if FAILURES:
        print(f"{len(FAILURES)} check(s) failed: {FAILURES}")
        return 1
    print("all CLI checks passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
