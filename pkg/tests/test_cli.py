import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from maskdet.cli import main, read_detections_jsonl
from maskdet.images import read_image, write_ppm
from maskdet.voc import parse_voc_xml, read_records

GOLDEN_ARGS = ["--score-threshold", "0.37", "--max-detections", "8"]


@pytest.fixture
def frames_copy(tmp_path, fixtures_dir):
    d = tmp_path / "frames"
    shutil.copytree(fixtures_dir / "frames", d)
    return d


class TestDetect:
    def test_golden(self, tmp_path, fixtures_dir, seed7_weights_path):
        out, ann = tmp_path / "d.jsonl", tmp_path / "ann"
        rc = main(["detect", "--weights", str(seed7_weights_path), "--input",
                   str(fixtures_dir / "frames"), "--output", str(out), "--annotate", str(ann),
                   *GOLDEN_ARGS])
        assert rc == 0
        assert out.read_bytes() == (fixtures_dir / "golden_detections.jsonl").read_bytes()
        for golden in sorted((fixtures_dir / "golden_annotated").iterdir()):
            assert (ann / golden.name).read_bytes() == golden.read_bytes()

    def test_worker_count_does_not_change_output(self, tmp_path, fixtures_dir, seed7_weights_path,
                                                 monkeypatch):
        monkeypatch.setenv("MASKDET_THREADS", "2")
        out = tmp_path / "d.jsonl"
        assert main(["detect", "--weights", str(seed7_weights_path), "--input",
                     str(fixtures_dir / "frames"), "--output", str(out), *GOLDEN_ARGS]) == 0
        assert out.read_bytes() == (fixtures_dir / "golden_detections.jsonl").read_bytes()

    def test_empty_input_dir(self, tmp_path, seed7_weights_path):
        (tmp_path / "in").mkdir()
        out = tmp_path / "d.jsonl"
        assert main(["detect", "--weights", str(seed7_weights_path), "--input",
                     str(tmp_path / "in"), "--output", str(out)]) == 0
        assert out.read_text() == ""

    def test_missing_weights_is_usage_error(self, tmp_path, fixtures_dir):
        assert main(["detect", "--weights", str(tmp_path / "nope"), "--input",
                     str(fixtures_dir / "frames"), "--output", str(tmp_path / "o")]) == 2

    def test_missing_input_is_usage_error(self, tmp_path, seed7_weights_path):
        assert main(["detect", "--weights", str(seed7_weights_path), "--input",
                     str(tmp_path / "nope"), "--output", str(tmp_path / "o")]) == 2

    @pytest.mark.parametrize("value", ["1.01", "0", "abc"])
    def test_bad_threshold_is_usage_error(self, tmp_path, seed7_weights_path, value):
        with pytest.raises(SystemExit) as exc:
            main(["detect", "--weights", str(seed7_weights_path), "--input", str(tmp_path),
                  "--output", str(tmp_path / "o"), "--score-threshold", value])
        assert exc.value.code == 2

    def test_bad_frame_skipped_unless_strict(self, tmp_path, frames_copy, seed7_weights_path, capsys):
        (frames_copy / "frame_001.ppm").write_bytes(b"P6\n10 10\n255\nshort")
        args = ["detect", "--weights", str(seed7_weights_path), "--input", str(frames_copy),
                "--output", str(tmp_path / "d.jsonl"), *GOLDEN_ARGS]
        assert main(args) == 0
        assert "skipped=1" in capsys.readouterr().err
        images = {r.image for r in read_detections_jsonl(tmp_path / "d.jsonl")}
        assert "frame_001" not in images and "frame_000" in images
        assert main(args + ["--strict"]) == 1

    def test_corrupt_weights_is_runtime_error(self, tmp_path, fixtures_dir, seed7_weights_path):
        bad = tmp_path / "bad.ssdw"
        bad.write_bytes(seed7_weights_path.read_bytes()[:-10])
        assert main(["detect", "--weights", str(bad), "--input", str(fixtures_dir / "frames"),
                     "--output", str(tmp_path / "o")]) == 1

    def test_module_entry_point(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "maskdet", "detect", "--weights",
                               str(tmp_path / "x"), "--input", str(tmp_path), "--output",
                               str(tmp_path / "o")], capture_output=True, text=True)
        assert proc.returncode == 2
        assert "weights not found" in proc.stderr


class TestEvaluate:
    def _gt_as_detections(self, fixtures_dir, path):
        lines = []
        for xml in sorted((fixtures_dir / "voc").glob("*.xml")):
            ann = parse_voc_xml(xml.read_bytes())
            for obj in ann.objects:
                lines.append(json.dumps({"image": ann.image_id, "class": obj.name, "score": 0.9,
                                         "bbox": list(obj.bbox)}))
        path.write_text("\n".join(lines) + "\n")

    def test_perfect_round_trip(self, tmp_path, fixtures_dir):
        dets, report, plot = tmp_path / "d.jsonl", tmp_path / "r.json", tmp_path / "pr.png"
        self._gt_as_detections(fixtures_dir, dets)
        rc = main(["evaluate", "--detections", str(dets), "--ground-truth", str(fixtures_dir / "voc"),
                   "--label-map", str(fixtures_dir / "label_map.pbtxt"), "--report", str(report),
                   "--plot", str(plot)])
        assert rc == 0
        r = json.loads(report.read_text())
        assert r["map_coco"] == 1.0 and r["ap50"] == 1.0 and r["ar_max100"] == 1.0
        assert r["operating_point"]["tp"] == 4
        assert plot.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_golden_detections_parse(self, tmp_path, fixtures_dir):
        report = tmp_path / "r.json"
        rc = main(["evaluate", "--detections", str(fixtures_dir / "golden_detections.jsonl"),
                   "--ground-truth", str(fixtures_dir / "voc"), "--report", str(report)])
        assert rc == 0
        r = json.loads(report.read_text())
        assert r["operating_point"]["fp"] == 24 and r["map_coco"] == 0.0

    def test_bad_jsonl(self, tmp_path, fixtures_dir):
        dets = tmp_path / "d.jsonl"
        dets.write_text('{"image": "a"}\n')
        assert main(["evaluate", "--detections", str(dets), "--ground-truth",
                     str(fixtures_dir / "voc")]) == 1


class TestBench:
    def test_report_and_plot(self, tmp_path, fixtures_dir, seed7_weights_path, capsys):
        out, plot = tmp_path / "b.json", tmp_path / "lat.png"
        rc = main(["bench", "--weights", str(seed7_weights_path), "--frames",
                   str(fixtures_dir / "frames"), "--warmup", "1", "--repeat", "2",
                   "--output", str(out), "--plot", str(plot)])
        assert rc == 0
        r = json.loads(out.read_text())
        assert r["frames"] == 6
        assert r["fps"] * r["total_seconds"] == pytest.approx(6, rel=1e-9)
        for s in r["stages_ms"].values():
            assert s["p95"] >= s["median"] > 0
        assert "fps=" in capsys.readouterr().out
        assert plot.stat().st_size > 0

    def test_no_frames(self, tmp_path, seed7_weights_path):
        (tmp_path / "e").mkdir()
        assert main(["bench", "--weights", str(seed7_weights_path), "--frames",
                     str(tmp_path / "e")]) == 2


class TestDataset:
    def test_split(self, tmp_path, capsys):
        items = tmp_path / "items.txt"
        items.write_text("".join(f"img{i:03d}\n" for i in range(100)))
        out = tmp_path / "s.json"
        assert main(["dataset", "split", "--items", str(items), "--ratio", "0.9", "--seed", "42",
                     "--output", str(out)]) == 0
        s = json.loads(out.read_text())
        assert (len(s["train"]), len(s["test"])) == (90, 10)
        main(["dataset", "split", "--items", str(items), "--seed", "42", "--output", str(tmp_path / "t.json")])
        assert (tmp_path / "t.json").read_text() == out.read_text()

    def test_convert_validate(self, tmp_path, fixtures_dir):
        rec = tmp_path / "d.mdr"
        assert main(["dataset", "convert", "--annotations", str(fixtures_dir / "voc"),
                     "--output", str(rec)]) == 0
        items = read_records(rec)
        assert [a.filename for a, _ in items] == ["img_a.ppm", "img_b.ppm"]
        assert items[0][1] == (fixtures_dir / "voc" / "img_a.ppm").read_bytes()
        assert main(["dataset", "validate", "--records", str(rec), "--annotations",
                     str(fixtures_dir / "voc"), "--label-map",
                     str(fixtures_dir / "label_map.pbtxt")]) == 0
        data = bytearray(rec.read_bytes())
        data[-1] ^= 1
        rec.write_bytes(bytes(data))
        assert main(["dataset", "validate", "--records", str(rec)]) == 1

    def test_validate_unknown_label(self, tmp_path, fixtures_dir):
        lm = tmp_path / "lm.pbtxt"
        lm.write_text("item { id: 1 name: 'Mask' }")
        assert main(["dataset", "validate", "--annotations", str(fixtures_dir / "voc"),
                     "--label-map", str(lm)]) == 1

    def test_stats(self, tmp_path, fixtures_dir):
        out, plot = tmp_path / "s.json", tmp_path / "areas.png"
        assert main(["dataset", "stats", "--annotations", str(fixtures_dir / "voc"),
                     "--output", str(out), "--plot", str(plot)]) == 0
        s = json.loads(out.read_text())
        assert s["objects_per_class"] == {"Mask": 3, "NoMask": 1}
        assert plot.stat().st_size > 0

    def test_split_needs_source(self):
        assert main(["dataset", "split"]) == 2


class TestAugment:
    def test_mixup_reproducible(self, tmp_path, fixtures_dir):
        voc = fixtures_dir / "voc"
        outs = []
        for k in range(2):
            out, boxes = tmp_path / f"m{k}.ppm", tmp_path / f"b{k}.json"
            assert main(["augment", "mixup", "--image-a", str(voc / "img_a.ppm"), "--image-b",
                         str(voc / "img_b.ppm"), "--annotation-a", str(voc / "img_a.xml"),
                         "--annotation-b", str(voc / "img_b.xml"), "--alpha", "0.4",
                         "--seed", "3", "--output", str(out), "--boxes-out", str(boxes)]) == 0
            outs.append((out.read_bytes(), boxes.read_text()))
        assert outs[0] == outs[1]
        b = json.loads(outs[0][1])
        assert len(b["boxes"]) == 4
        assert sum(x["weight"] for x in b["boxes"] if x["bbox"] == [10, 10, 40, 44]) \
            == pytest.approx(1 - b["lambda"])

    def test_mixup_bad_alpha(self, tmp_path, fixtures_dir):
        voc = fixtures_dir / "voc"
        assert main(["augment", "mixup", "--image-a", str(voc / "img_a.ppm"), "--image-b",
                     str(voc / "img_b.ppm"), "--alpha", "0", "--output", str(tmp_path / "o.ppm")]) == 2

    def test_flip_with_annotation(self, tmp_path, fixtures_dir):
        voc = fixtures_dir / "voc"
        out, xml = tmp_path / "f.ppm", tmp_path / "f.xml"
        assert main(["augment", "flip", "--image", str(voc / "img_a.ppm"), "--annotation",
                     str(voc / "img_a.xml"), "--output", str(out), "--annotation-out", str(xml)]) == 0
        np.testing.assert_array_equal(read_image(out), read_image(voc / "img_a.ppm")[:, ::-1])
        assert parse_voc_xml(xml.read_text()).objects[0].bbox == (34, 6, 60, 40)

    def test_translate_drops_boxes(self, tmp_path, fixtures_dir):
        voc = fixtures_dir / "voc"
        xml = tmp_path / "t.xml"
        assert main(["augment", "translate", "--image", str(voc / "img_a.ppm"), "--annotation",
                     str(voc / "img_a.xml"), "--dx", "40", "--output", str(tmp_path / "t.ppm"),
                     "--annotation-out", str(xml)]) == 0
        assert [o.name for o in parse_voc_xml(xml.read_text()).objects] == ["Mask"]

    def test_rotate(self, tmp_path):
        img = np.arange(16 * 16 * 3, dtype=np.uint8).reshape(16, 16, 3)
        write_ppm(tmp_path / "i.ppm", img)
        assert main(["augment", "rotate", "--image", str(tmp_path / "i.ppm"), "--angle", "90",
                     "--output", str(tmp_path / "r.ppm")]) == 0
        np.testing.assert_array_equal(read_image(tmp_path / "r.ppm"), np.rot90(img))


class TestWeights:
    def test_init_inspect_validate(self, tmp_path, capsys, seed7_weights_path):
        w = tmp_path / "w.ssdw"
        assert main(["weights", "init-random", "--seed", "7", "--output", str(w)]) == 0
        assert w.read_bytes() == seed7_weights_path.read_bytes()
        assert main(["weights", "inspect", str(w)]) == 0
        out = capsys.readouterr().out
        assert "stem.conv.weight" in out and "[3, 3, 3, 32]" in out
        assert main(["weights", "validate", str(w)]) == 0

    def test_validate_reports_missing(self, tmp_path, seed7_store, capsys):
        from maskdet.weights import save_weights
        w = tmp_path / "w.ssdw"
        save_weights({k: v for k, v in seed7_store.items() if not k.startswith("head.conv")}, w)
        assert main(["weights", "validate", str(w)]) == 1
        assert "error: missing layer head.conv" in capsys.readouterr().out
