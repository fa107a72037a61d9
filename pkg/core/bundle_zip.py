# core/bundle_zip.py
from __future__ import annotations

import json
import zipfile
from io import BytesIO
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

from core.exporters import ExportBundle, report_markdown
from core.schemas import EvalReport

_SKIP_SUFFIXES = (".tmp",)


def _run_files(run_dir: Path, include_checkpoints: bool) -> List[Path]:
    files = []
    for p in sorted(run_dir.rglob("*")):
        if not p.is_file() or p.suffix in _SKIP_SUFFIXES:
            continue
        if not include_checkpoints and p.name.startswith("checkpoint_") and p.suffix == ".bin":
            continue
        files.append(p)
    return files


def build_run_bundle_zip(
    *,
    run_dir: Optional[Union[str, Path]] = None,
    report: Optional[EvalReport] = None,
    games: Optional[Sequence[Dict[str, Any]]] = None,
    exports: Optional[ExportBundle] = None,
    run_config: Optional[Dict[str, Any]] = None,
    include_checkpoints: bool = False,
) -> bytes:
    """
    ZIP bytes holding:
      - run/...             files of a training or eval output directory
      - report.md           evaluation report (when given)
      - exports/report.*    docx/pdf exports (when given)
      - config.json         app-side run configuration (optional)
      - metadata.json       counts
    """
    root = Path(run_dir) if run_dir is not None else None
    files = _run_files(root, include_checkpoints) if root is not None and root.is_dir() else []

    buf = BytesIO()
    with zipfile.ZipFile(buf, mode="w", compression=zipfile.ZIP_DEFLATED) as zf:
        for p in files:
            zf.write(p, arcname=f"run/{p.relative_to(root).as_posix()}")

        if report is not None:
            zf.writestr("report.md", report_markdown(report, games))
        if exports is not None:
            if exports.docx:
                zf.writestr("exports/report.docx", exports.docx)
            if exports.pdf:
                zf.writestr("exports/report.pdf", exports.pdf)

        if run_config is not None:
            zf.writestr("config.json", json.dumps(run_config, indent=2, ensure_ascii=False))
        metadata = {
            "run_files": len(files),
            "games": len(games) if games else 0,
            "report": report.model_dump(mode="json") if report is not None else None,
        }
        zf.writestr("metadata.json", json.dumps(metadata, indent=2, ensure_ascii=False))
        zf.writestr(
            "README.txt",
            "PI-A3C run bundle\n"
            "- run/: output directory (metrics.jsonl, learning_curve.csv, eval_report.jsonl, replays)\n"
            "- report.md: evaluation report (if available)\n"
            "- exports/: report.docx / report.pdf (if available)\n"
            "- config.json: app-side configuration (if available)\n"
            "- metadata.json: counts and report summary\n",
        )

    return buf.getvalue()
