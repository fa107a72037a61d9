# core/exporters.py
from __future__ import annotations

import logging
from dataclasses import dataclass
from io import BytesIO
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

from core.schemas import EvalReport

logger = logging.getLogger("pi_a3c.exporters")


class ExportError(RuntimeError):
    pass


@dataclass
class ExportBundle:
    md: bytes
    txt: bytes
    docx: bytes
    pdf: bytes


def report_title(report: EvalReport) -> str:
    return f"{report.agent} vs {report.opponent.value}: {report.games} games"


def report_rows(report: EvalReport) -> List[List[str]]:
    return [
        ["Games", str(report.games)],
        ["Wins", f"{report.wins} ({report.win_rate:.1%})"],
        ["Losses", f"{report.losses} ({report.loss_rate:.1%})"],
        ["  by suicide", str(report.suicides)],
        ["Ties", f"{report.ties} ({report.tie_rate:.1%})"],
        ["Mean reward", f"{report.mean_reward:.4f}"],
        ["Seed", str(report.seed)],
    ]


def report_markdown(
    report: EvalReport,
    games: Optional[Sequence[Dict[str, Any]]] = None,
    curve: Optional[pd.DataFrame] = None,
) -> str:
    lines = [f"# {report_title(report)}", "", "| Metric | Value |", "|---|---|"]
    lines += [f"| {k.strip()} | {v} |" for k, v in report_rows(report)]
    if games:
        lines += ["", "## Games", "", "| # | Result | Length | Outcome | Suicide |", "|---|---|---|---|---|"]
        for g in games:
            lines.append(
                f"| {g['game_index']} | {g['result']} | {g['length']} | {g['outcome']} | "
                f"{'yes' if g['suicide'] else ''} |"
            )
    if curve is not None and not curve.empty:
        lines += ["", "## Learning curve", "", "| Episodes | Mean reward | Std |", "|---|---|---|"]
        for row in curve.itertuples(index=False):
            lines.append(f"| {int(row.episode_bucket)} | {row.mean_reward:.4f} | {row.std_reward:.4f} |")
    return "\n".join(lines) + "\n"


def report_text(report: EvalReport) -> str:
    width = max(len(k) for k, _ in report_rows(report))
    body = "\n".join(f"{k.ljust(width)}  {v}" for k, v in report_rows(report))
    return f"{report_title(report)}\n\n{body}\n"


def export_markdown(report: EvalReport, games: Optional[Sequence[Dict[str, Any]]] = None) -> bytes:
    return report_markdown(report, games).encode("utf-8")


def export_txt(report: EvalReport) -> bytes:
    return report_text(report).encode("utf-8")


def export_docx(report: EvalReport) -> bytes:
    """Title plus a two-column results table (python-docx)."""
    try:
        from docx import Document
    except Exception as e:
        raise ExportError(f"python-docx not installed/available: {e}") from e

    try:
        doc = Document()
        doc.add_heading(report_title(report), level=1)
        rows = report_rows(report)
        table = doc.add_table(rows=len(rows), cols=2)
        for i, (k, v) in enumerate(rows):
            table.cell(i, 0).text = k
            table.cell(i, 1).text = v
        buf = BytesIO()
        doc.save(buf)
        return buf.getvalue()
    except Exception as e:
        logger.exception("DOCX export failed")
        raise ExportError(f"DOCX export failed: {e}") from e


def export_pdf(report: EvalReport) -> bytes:
    try:
        from reportlab.lib.pagesizes import LETTER
        from reportlab.lib.styles import getSampleStyleSheet
        from reportlab.platypus import Paragraph, SimpleDocTemplate, Spacer, Table
    except Exception as e:
        raise ExportError(f"reportlab not installed/available: {e}") from e

    try:
        buf = BytesIO()
        doc = SimpleDocTemplate(buf, pagesize=LETTER)
        styles = getSampleStyleSheet()
        story = [
            Paragraph(report_title(report), styles["Title"]),
            Spacer(1, 12),
            Table(report_rows(report)),
        ]
        doc.build(story)
        return buf.getvalue()
    except Exception as e:
        logger.exception("PDF export failed")
        raise ExportError(f"PDF export failed: {e}") from e


def build_export_bundle(report: EvalReport, games: Optional[Sequence[Dict[str, Any]]] = None) -> ExportBundle:
    return ExportBundle(
        md=export_markdown(report, games),
        txt=export_txt(report),
        docx=export_docx(report),
        pdf=export_pdf(report),
    )
