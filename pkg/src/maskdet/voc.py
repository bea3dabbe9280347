"""Pascal VOC annotations, pbtxt label maps, dataset splits, record files, stats."""
from __future__ import annotations

import json
import logging
import math
import re
import struct
import xml.etree.ElementTree as ET
import zlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)


class AnnotationError(ValueError):
    pass


@dataclass(frozen=True)
class VocObject:
    name: str
    bbox: tuple  # (xmin, ymin, xmax, ymax) integer pixel corners


@dataclass(frozen=True)
class Annotation:
    filename: str
    width: int
    height: int
    depth: int = 3
    objects: tuple = field(default=())

    def __post_init__(self):
        if min(self.width, self.height, self.depth) <= 0:
            raise AnnotationError(f"{self.filename}: image size must be positive")
        object.__setattr__(self, "objects", tuple(self.objects))
        for i, obj in enumerate(self.objects):
            _check_bbox(obj.bbox, self.width, self.height, f"annotation/object[{i}]/bndbox")

    @property
    def image_id(self) -> str:
        return Path(self.filename).stem

    def to_json(self) -> dict:
        return {"filename": self.filename, "width": self.width, "height": self.height,
                "depth": self.depth,
                "objects": [{"name": o.name, "bbox": list(o.bbox)} for o in self.objects]}

    @classmethod
    def from_json(cls, d: dict) -> "Annotation":
        return cls(d["filename"], int(d["width"]), int(d["height"]), int(d.get("depth", 3)),
                   tuple(VocObject(o["name"], tuple(int(v) for v in o["bbox"]))
                         for o in d.get("objects", [])))


def _check_bbox(bbox, width, height, where):
    xmin, ymin, xmax, ymax = bbox
    if not (0 <= xmin < xmax <= width):
        raise AnnotationError(
            f"{where}: need 0 <= xmin < xmax <= width, got xmin={xmin} xmax={xmax} width={width}")
    if not (0 <= ymin < ymax <= height):
        raise AnnotationError(
            f"{where}: need 0 <= ymin < ymax <= height, got ymin={ymin} ymax={ymax} height={height}")


def _int(node, tag, where) -> int:
    child = node.find(tag)
    if child is None or child.text is None:
        raise AnnotationError(f"{where}/{tag}: missing")
    try:
        return int(round(float(child.text.strip())))
    except ValueError:
        raise AnnotationError(f"{where}/{tag}: not a number: {child.text!r}") from None


def parse_voc_xml(text: str | bytes) -> Annotation:
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise AnnotationError(f"malformed XML: {exc}") from exc
    if root.tag != "annotation":
        raise AnnotationError(f"root element is <{root.tag}>, expected <annotation>")
    filename = (root.findtext("filename") or "").strip()
    size = root.find("size")
    if size is None:
        raise AnnotationError("annotation/size: missing")
    width = _int(size, "width", "annotation/size")
    height = _int(size, "height", "annotation/size")
    depth = _int(size, "depth", "annotation/size") if size.find("depth") is not None else 3
    objects = []
    for i, obj in enumerate(root.findall("object")):
        where = f"annotation/object[{i}]"
        name = (obj.findtext("name") or "").strip()
        if not name:
            raise AnnotationError(f"{where}/name: missing")
        box = obj.find("bndbox")
        if box is None:
            raise AnnotationError(f"{where}/bndbox: missing")
        bbox = tuple(_int(box, t, f"{where}/bndbox") for t in ("xmin", "ymin", "xmax", "ymax"))
        _check_bbox(bbox, width, height, f"{where}/bndbox")
        objects.append(VocObject(name, bbox))
    return Annotation(filename, width, height, depth, tuple(objects))


def write_voc_xml(ann: Annotation) -> str:
    """Serialize in the compact single-line layout that :func:`parse_voc_xml` reads."""
    root = ET.Element("annotation")
    ET.SubElement(root, "filename").text = ann.filename
    size = ET.SubElement(root, "size")
    for tag, v in (("width", ann.width), ("height", ann.height), ("depth", ann.depth)):
        ET.SubElement(size, tag).text = str(v)
    for obj in ann.objects:
        o = ET.SubElement(root, "object")
        ET.SubElement(o, "name").text = obj.name
        box = ET.SubElement(o, "bndbox")
        for tag, v in zip(("xmin", "ymin", "xmax", "ymax"), obj.bbox):
            ET.SubElement(box, tag).text = str(v)
    return ET.tostring(root, encoding="unicode")


def load_annotations(directory) -> list[tuple[Path, Annotation]]:
    """Parse every ``*.xml`` in ``directory`` (sorted by name)."""
    out = []
    for path in sorted(Path(directory).glob("*.xml")):
        try:
            out.append((path, parse_voc_xml(path.read_bytes())))
        except AnnotationError as exc:
            raise AnnotationError(f"{path.name}: {exc}") from None
    return out


# --- label maps -----------------------------------------------------------

class LabelMap:
    """Bijection between class names and positive ids; id 0 is background."""

    def __init__(self, items: Iterable[tuple[int, str]] = ()):
        self.id_to_name: dict[int, str] = {}
        self.name_to_id: dict[str, int] = {}
        for id_, name in items:
            if id_ <= 0:
                raise ValueError(f"label id must be positive, got {id_} for {name!r}")
            if id_ in self.id_to_name:
                raise ValueError(f"duplicate label id {id_}")
            if name in self.name_to_id:
                raise ValueError(f"duplicate label name {name!r}")
            self.id_to_name[id_] = name
            self.name_to_id[name] = id_

    def __len__(self):
        return len(self.id_to_name)

    def __contains__(self, name):
        return name in self.name_to_id

    def __eq__(self, other):
        return isinstance(other, LabelMap) and self.id_to_name == other.id_to_name

    def __repr__(self):
        return f"LabelMap({self.id_to_name})"

    def names(self) -> list[str]:
        """Names ordered by id."""
        return [self.id_to_name[i] for i in sorted(self.id_to_name)]

    def as_dict(self) -> dict[str, int]:
        return dict(self.name_to_id)


_ITEM = re.compile(r"item\s*\{(.*?)\}", re.S)
_FIELD = re.compile(r"""(\w+)\s*:\s*(?:'([^']*)'|"([^"]*)"|(-?\d+))""")


def parse_label_map(text: str) -> LabelMap:
    """Parse ``item { id: <int> name: '<text>' }`` blocks."""
    items = []
    stripped = _ITEM.sub("", text)
    if stripped.strip():
        raise ValueError(f"unexpected content in label map: {stripped.strip()[:40]!r}")
    for block in _ITEM.findall(text):
        fields = {}
        for key, sq, dq, num in _FIELD.findall(block):
            fields[key] = int(num) if num else (sq if sq or not dq else dq)
        if "id" not in fields or "name" not in fields:
            raise ValueError(f"label map item needs id and name: {block.strip()!r}")
        if not isinstance(fields["id"], int):
            raise ValueError(f"label id must be an integer: {fields['id']!r}")
        items.append((fields["id"], str(fields["name"])))
    if not items:
        log.warning("label map is empty")
    return LabelMap(items)


def write_label_map(label_map: LabelMap) -> str:
    return "".join(f"item {{\n  id: {i}\n  name: '{label_map.id_to_name[i]}'\n}}\n"
                   for i in sorted(label_map.id_to_name))


DEFAULT_LABEL_MAP = LabelMap([(1, "Mask"), (2, "NoMask")])


# --- splits ----------------------------------------------------------------

@dataclass(frozen=True)
class DatasetSplit:
    train: tuple
    test: tuple
    seed: int


def split_dataset(item_ids: Sequence[str], ratio: float = 0.9, seed: int = 0) -> DatasetSplit:
    """Shuffle with numpy's PCG64 generator and cut at ``round(ratio * N)``.

    Rounding is half-up.  The shuffle is applied to the ids in the order
    given, so callers wanting order-independence should sort first.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"ratio must be within [0, 1], got {ratio}")
    ids = list(item_ids)
    if len(set(ids)) != len(ids):
        raise ValueError("item ids must be unique")
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(len(ids))
    n_train = math.floor(ratio * len(ids) + 0.5)
    shuffled = [ids[i] for i in perm]
    return DatasetSplit(tuple(shuffled[:n_train]), tuple(shuffled[n_train:]), seed)


# --- record container ------------------------------------------------------

RECORD_MAGIC = b"MDR1"


class RecordError(ValueError):
    pass


def encode_record(ann: Annotation, image_bytes: bytes) -> bytes:
    meta = json.dumps(ann.to_json(), separators=(",", ":")).encode("utf-8")
    return struct.pack("<I", len(meta)) + meta + image_bytes


def decode_record(payload: bytes) -> tuple[Annotation, bytes]:
    if len(payload) < 4:
        raise RecordError("payload shorter than its JSON length prefix")
    (n,) = struct.unpack_from("<I", payload)
    if 4 + n > len(payload):
        raise RecordError("JSON length exceeds payload")
    ann = Annotation.from_json(json.loads(payload[4:4 + n].decode("utf-8")))
    return ann, bytes(payload[4 + n:])


def write_records(items: Iterable[tuple[Annotation, bytes]], path) -> int:
    count = 0
    with open(path, "wb") as fh:
        fh.write(RECORD_MAGIC)
        for ann, image in items:
            payload = encode_record(ann, image)
            fh.write(struct.pack("<Q", len(payload)))
            fh.write(payload)
            fh.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))
            count += 1
    return count


def iter_record_payloads(data: bytes):
    if data[:4] != RECORD_MAGIC:
        raise RecordError(f"bad magic {data[:4]!r}, expected {RECORD_MAGIC!r}")
    pos, index = 4, 0
    while pos < len(data):
        if pos + 8 > len(data):
            raise RecordError(f"record {index}: truncated length field")
        (n,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        if pos + n + 4 > len(data):
            raise RecordError(f"record {index}: truncated payload")
        payload = data[pos:pos + n]
        (crc,) = struct.unpack_from("<I", data, pos + n)
        if zlib.crc32(payload) & 0xFFFFFFFF != crc:
            raise RecordError(f"record {index}: CRC mismatch")
        yield payload
        pos += n + 4
        index += 1


def read_records(path) -> list[tuple[Annotation, bytes]]:
    data = Path(path).read_bytes()
    out = []
    for index, payload in enumerate(iter_record_payloads(data)):
        try:
            out.append(decode_record(payload))
        except (RecordError, ValueError, KeyError) as exc:
            raise RecordError(f"record {index}: {exc}") from exc
    return out


# --- statistics ------------------------------------------------------------

def dataset_stats(annotations: Sequence[Annotation], classes: Sequence[str] = ()) -> dict:
    """Object and image counts per class, class balance and box-area deciles."""
    objects = Counter()
    images = Counter()
    areas = []
    for ann in annotations:
        seen = set()
        for obj in ann.objects:
            objects[obj.name] += 1
            seen.add(obj.name)
            x0, y0, x1, y1 = obj.bbox
            areas.append((x1 - x0) * (y1 - y0))
        images.update(seen)
    names = list(dict.fromkeys([*classes, *sorted(objects)]))
    total = sum(objects.values())
    if areas:
        deciles = np.percentile(np.asarray(areas, dtype=np.float64), np.arange(0, 101, 10))
        hist = np.histogram(areas, bins=deciles)[0] if deciles[-1] > deciles[0] \
            else np.array([len(areas)] + [0] * 9)
    else:
        deciles, hist = np.zeros(11), np.zeros(10, dtype=int)
    return {
        "images": len(annotations),
        "objects": total,
        "objects_per_class": {n: objects.get(n, 0) for n in names},
        "images_per_class": {n: images.get(n, 0) for n in names},
        "class_balance": {n: (objects.get(n, 0) / total if total else 0.0) for n in names},
        "area_deciles": [float(v) for v in deciles],
        "area_histogram": [int(v) for v in hist],
        "areas": areas,
    }
