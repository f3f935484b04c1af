import csv
import json
import os
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Tuple

from errors import PairingError, VipastainError
from .patch import StainDomain, parse_patch_id

MANIFEST_HEADER = ["patch_id", "stain", "split", "image_path", "mask_paths", "annotation_path"]


@dataclass(frozen=True)
class ManifestRow:
    patch_id: str
    stain: StainDomain
    split: str = "all"
    image_path: str = ""
    mask_paths: Dict[str, str] = field(default_factory=dict)
    annotation_path: str = ""

    @property
    def slide_id(self) -> str:
        return parse_patch_id(self.patch_id)[0]


@dataclass
class DatasetManifest:
    rows: List[ManifestRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    @property
    def slide_ids(self) -> List[str]:
        return sorted({row.slide_id for row in self.rows})

    def filter(self, stain: Optional[StainDomain] = None, split: Optional[str] = None) -> "DatasetManifest":
        rows = [
            row for row in self.rows
            if (stain is None or row.stain == stain) and (split is None or row.split == split)
        ]
        return DatasetManifest(rows)

    def with_split(self, split: str) -> "DatasetManifest":
        return DatasetManifest([replace(row, split=split) for row in self.rows])

    def extend(self, rows: Iterable[ManifestRow]):
        self.rows.extend(rows)

    def pairs(self) -> List[Tuple[ManifestRow, ManifestRow]]:
        """
        H&E 图块与同编号虚拟 CD20 图块的一一配对
        :raises PairingError: 存在没有虚拟 CD20 对应项的 H&E 图块
        """
        virtual = {row.patch_id: row for row in self.rows if row.stain == StainDomain.VIRTUAL_CD20}
        he_rows = [row for row in self.rows if row.stain == StainDomain.HE]
        unpaired = [row.patch_id for row in he_rows if row.patch_id not in virtual]
        if unpaired:
            raise PairingError(unpaired)
        return [(row, virtual[row.patch_id]) for row in he_rows]

    def write_csv(self, path: str):
        """写出清单，路径保存为相对清单所在目录的形式"""
        base = os.path.dirname(os.path.abspath(path))
        try:
            os.makedirs(base, exist_ok=True)
            with open(path, "w", encoding="utf-8", newline="") as f:
                writer = csv.writer(f, lineterminator="\n")
                writer.writerow(MANIFEST_HEADER)
                for row in self.rows:
                    masks = ";".join(
                        f"{kind}={_relative(p, base)}" for kind, p in sorted(row.mask_paths.items())
                    )
                    writer.writerow([
                        row.patch_id,
                        row.stain.value,
                        row.split,
                        _relative(row.image_path, base),
                        masks,
                        _relative(row.annotation_path, base),
                    ])
        except OSError as e:
            raise VipastainError(f"写入清单失败: {path}: {e}")

    @classmethod
    def read_csv(cls, path: str) -> "DatasetManifest":
        base = os.path.dirname(os.path.abspath(path))
        try:
            with open(path, "r", encoding="utf-8", newline="") as f:
                reader = csv.DictReader(f)
                if reader.fieldnames != MANIFEST_HEADER:
                    raise VipastainError(f"清单表头错误: {path}: {reader.fieldnames}")
                rows = []
                for record in reader:
                    masks = {}
                    for item in filter(None, record["mask_paths"].split(";")):
                        kind, _, mask_path = item.partition("=")
                        masks[kind] = _absolute(mask_path, base)
                    rows.append(ManifestRow(
                        patch_id=record["patch_id"],
                        stain=StainDomain(record["stain"]),
                        split=record["split"],
                        image_path=_absolute(record["image_path"], base),
                        mask_paths=masks,
                        annotation_path=_absolute(record["annotation_path"], base),
                    ))
        except FileNotFoundError:
            raise VipastainError(f"清单文件不存在: {path}")
        except (OSError, KeyError, ValueError) as e:
            raise VipastainError(f"读取清单失败: {path}: {e}")
        return cls(rows)


def _relative(path: str, base: str) -> str:
    if not path:
        return ""
    return os.path.relpath(os.path.abspath(path), base).replace(os.sep, "/")


def _absolute(path: str, base: str) -> str:
    if not path:
        return ""
    return os.path.normpath(os.path.join(base, path))


def write_annotations(path: str, records: Iterable[Tuple[str, List[List[int]]]]):
    """
    写出 JSON lines 标注文件，每行 {"patch_id", "boxes": [[x,y,w,h], …]}
    """
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            for patch_id, boxes in records:
                f.write(json.dumps({"patch_id": patch_id, "boxes": [list(map(int, b)) for b in boxes]}) + "\n")
    except OSError as e:
        raise VipastainError(f"写入标注失败: {path}: {e}")


def read_annotations(path: str) -> Dict[str, List[Tuple[int, int, int, int]]]:
    annotations: Dict[str, List[Tuple[int, int, int, int]]] = {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            for line in f:
                if not line.strip():
                    continue
                record = json.loads(line)
                boxes = [tuple(int(v) for v in box) for box in record.get("boxes", [])]
                annotations.setdefault(record["patch_id"], []).extend(boxes)
    except FileNotFoundError:
        raise VipastainError(f"标注文件不存在: {path}")
    except (OSError, ValueError, KeyError) as e:
        raise VipastainError(f"读取标注失败: {path}: {e}")
    return annotations


def load_manifest_annotations(manifest: DatasetManifest) -> Dict[str, List[Tuple[int, int, int, int]]]:
    """汇总清单中所有行引用的标注文件（同一文件只读一次）"""
    merged: Dict[str, List[Tuple[int, int, int, int]]] = {}
    cache: Dict[str, Dict[str, List[Tuple[int, int, int, int]]]] = {}
    for row in manifest:
        if not row.annotation_path:
            continue
        if row.annotation_path not in cache:
            cache[row.annotation_path] = read_annotations(row.annotation_path)
        merged[row.patch_id] = cache[row.annotation_path].get(row.patch_id, [])
    return merged
