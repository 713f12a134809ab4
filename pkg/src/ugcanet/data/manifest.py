"""CSV manifests tying image files to masks and labels.

Header: ``image,mask?,pos_label?,le_label?,hp_label?,lighting?``. Optional
columns are left empty when a sample lacks that target; the task indicator
follows from which cells are filled. Paths are relative to the manifest.
"""

from __future__ import annotations

import csv
from pathlib import Path

from .netpbm import load_netpbm, save_netpbm
from .records import LIGHTING_MODES, DataError, LabelRecord, SampleRecord, TaskIndicator

COLUMNS = ("image", "mask?", "pos_label?", "le_label?", "hp_label?", "lighting?")
_RANGES = {"pos_label": 10, "le_label": 6, "hp_label": 2}


def _field(row: dict, name: str) -> str:
    return (row.get(name + "?") or row.get(name) or "").strip()


def _label(row: dict, name: str, rownum: int):
    cell = _field(row, name)
    if not cell:
        return None
    try:
        v = int(cell)
    except ValueError:
        raise DataError(f"row {rownum}: {name} {cell!r} is not an integer") from None
    if not 0 <= v < _RANGES[name]:
        raise DataError(f"row {rownum}: {name} {v} outside 0..{_RANGES[name] - 1}")
    return v


def read_manifest(path, load_images: bool = True) -> list:
    """Parse and validate a manifest; errors name the 1-based data row."""
    path = Path(path)
    root = path.parent
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read manifest {path}: {e.strerror}") from None
    reader = csv.DictReader(text.splitlines())
    header = [h.rstrip("?") for h in (reader.fieldnames or [])]
    if "image" not in header:
        raise DataError(f"{path}: header must start with 'image', got {reader.fieldnames}")
    unknown = set(header) - {c.rstrip("?") for c in COLUMNS}
    if unknown:
        raise DataError(f"{path}: unknown columns {sorted(unknown)}")

    out = []
    for rownum, row in enumerate(reader, start=1):
        image_rel = _field(row, "image")
        if not image_rel:
            raise DataError(f"row {rownum}: empty image path")
        mask_rel = _field(row, "mask")
        labels = LabelRecord(
            pos=_label(row, "pos_label", rownum),
            le=_label(row, "le_label", rownum),
            hp=_label(row, "hp_label", rownum),
        )
        lighting = _field(row, "lighting") or None
        if lighting is not None and lighting not in LIGHTING_MODES:
            raise DataError(f"row {rownum}: lighting {lighting!r} not in {LIGHTING_MODES}")
        mu = TaskIndicator(
            int(labels.pos is not None), int(labels.le is not None), int(labels.hp is not None), int(bool(mask_rel))
        )
        for rel in (image_rel, mask_rel):
            if rel and not (root / rel).is_file():
                raise DataError(f"row {rownum}: file not found: {root / rel}")
        meta = {"source": str(path), "row": rownum, "image": image_rel, "lighting": lighting}
        if not load_images:
            out.append(meta | {"mu": tuple(mu)})
            continue
        image = load_netpbm(root / image_rel)
        if image.shape[0] != 3:
            raise DataError(f"row {rownum}: image must be a PPM (3 channels)")
        mask = load_netpbm(root / mask_rel, mask=True) if mask_rel else None
        try:
            out.append(SampleRecord(image, mask, labels, mu, meta).validate())
        except DataError as e:
            raise DataError(f"row {rownum}: {e}") from None
    return out


def write_manifest(path, samples, prefix: str = "img") -> None:
    """Write samples as PPM/PGM files next to ``path`` plus the CSV itself."""
    path = Path(path)
    root = path.parent
    root.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, s in enumerate(samples):
        image_rel = f"{prefix}_{i:04d}.ppm"
        save_netpbm(root / image_rel, s.image)
        mask_rel = ""
        if s.mask is not None:
            mask_rel = f"{prefix}_{i:04d}_mask.pgm"
            save_netpbm(root / mask_rel, s.mask)

        def cell(v):
            return "" if v is None else str(v)

        rows.append(
            [image_rel, mask_rel, cell(s.labels.pos), cell(s.labels.le), cell(s.labels.hp), s.meta.get("lighting") or ""]
        )
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(COLUMNS)
        w.writerows(rows)
