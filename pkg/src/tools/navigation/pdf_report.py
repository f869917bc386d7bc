"""
Printable evaluation and ablation reports.
Tables per difficulty band, plus goal-observation previews for evaluation runs.
"""

from io import BytesIO
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image as PILImage
from reportlab.lib import colors
from reportlab.lib.pagesizes import letter
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.lib.units import inch
from reportlab.platypus import Image, Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle

from .augment import COLOR_CHANNELS


BAND_HEIGHT = 8
PIXEL_SCALE = 4


def observation_image(observation: np.ndarray) -> PILImage.Image:
    """
    One horizontal band per view, stacked top to bottom. A depth channel, when
    present, is drawn as a grey band under its color band.
    """
    observation = np.asarray(observation, dtype=np.float64)
    bands = []
    for view in observation:
        rgb = np.clip(view[:COLOR_CHANNELS].T, 0.0, 1.0)
        bands.append(np.repeat(rgb[None], BAND_HEIGHT, axis=0))
        if view.shape[0] > COLOR_CHANNELS:
            depth = np.clip(view[COLOR_CHANNELS], 0.0, 1.0)
            grey = np.repeat(depth[:, None], 3, axis=1)
            bands.append(np.repeat(grey[None], BAND_HEIGHT // 2, axis=0))
    pixels = (np.concatenate(bands, axis=0) * 255).round().astype(np.uint8)
    img = PILImage.fromarray(pixels)
    return img.resize((img.width * PIXEL_SCALE, img.height * PIXEL_SCALE), PILImage.Resampling.NEAREST)


def _png_flowable(img: PILImage.Image, max_width: float) -> Image:
    buffer = BytesIO()
    img.save(buffer, format="PNG")
    buffer.seek(0)
    width = min(max_width, img.width)
    return Image(buffer, width=width, height=width * img.height / img.width)


def _styles() -> dict:
    styles = getSampleStyleSheet()
    return {
        "title": ParagraphStyle(
            'ReportTitle',
            parent=styles['Heading1'],
            fontSize=22,
            textColor=colors.HexColor('#2C3E50'),
            spaceAfter=12,
            alignment=1,  # Center
            fontName='Helvetica-Bold'
        ),
        "heading": ParagraphStyle(
            'ReportHeading',
            parent=styles['Heading2'],
            fontSize=14,
            textColor=colors.HexColor('#34495E'),
            spaceAfter=8,
            spaceBefore=12,
            fontName='Helvetica-Bold'
        ),
        "body": ParagraphStyle(
            'ReportBody',
            parent=styles['Normal'],
            fontSize=9,
            textColor=colors.HexColor('#2C3E50'),
        ),
    }


def _table(rows: list, col_widths: Optional[list] = None) -> Table:
    table = Table(rows, colWidths=col_widths)
    table.setStyle(TableStyle([
        ('BACKGROUND', (0, 0), (-1, 0), colors.HexColor('#34495E')),
        ('TEXTCOLOR', (0, 0), (-1, 0), colors.white),
        ('FONTNAME', (0, 0), (-1, 0), 'Helvetica-Bold'),
        ('FONTNAME', (0, 1), (-1, -1), 'Helvetica'),
        ('FONTSIZE', (0, 0), (-1, -1), 9),
        ('ALIGN', (1, 0), (-1, -1), 'RIGHT'),
        ('ROWBACKGROUNDS', (0, 1), (-1, -1), [colors.white, colors.HexColor('#F8F9F9')]),
        ('BOTTOMPADDING', (0, 0), (-1, -1), 5),
        ('TOPPADDING', (0, 0), (-1, -1), 5),
        ('GRID', (0, 0), (-1, -1), 0.5, colors.HexColor('#BDC3C7')),
    ]))
    return table


def _document(filepath: Path) -> SimpleDocTemplate:
    return SimpleDocTemplate(
        str(filepath),
        pagesize=letter,
        rightMargin=0.5*inch,
        leftMargin=0.5*inch,
        topMargin=0.5*inch,
        bottomMargin=0.5*inch,
        invariant=1,
        title="navmem report",
    )


def _fmt(value) -> str:
    if value is None or value == "":
        return "-"
    if isinstance(value, float):
        return f"{value:.3f}"
    return str(value)


def create_evaluation_pdf(report: dict, filepath: Path, previews: Sequence[tuple] = ()) -> Path:
    """
    Render an evaluation report.

    Args:
        report: dict as produced by EvaluationReport.to_dict()
        filepath: where the PDF is written
        previews: (episode id, goal observation) pairs to draw
    """
    filepath = Path(filepath)
    filepath.parent.mkdir(parents=True, exist_ok=True)
    doc = _document(filepath)
    style = _styles()
    story = [Paragraph("Navigation evaluation", style["title"])]

    info = [["Field", "Value"]] + [[key, _fmt(report[key])] for key in sorted(report) if key != "difficulty"]
    story.append(_table(info, [2*inch, 4.5*inch]))
    story.append(Spacer(1, 0.2*inch))

    story.append(Paragraph("Results by difficulty", style["heading"]))
    rows = [["Difficulty", "Episodes", "Success", "SPL"]]
    for name, cell in report["difficulty"].items():
        rows.append([name, str(cell["n"]), _fmt(cell["success"]), _fmt(cell["spl"])])
    story.append(_table(rows, [2*inch, 1.5*inch, 1.5*inch, 1.5*inch]))

    if previews:
        story.append(Paragraph("Sample goal observations", style["heading"]))
        for episode_id, observation in previews:
            story.append(Paragraph(episode_id, style["body"]))
            story.append(_png_flowable(observation_image(observation), 6.5*inch))
            story.append(Spacer(1, 0.1*inch))

    doc.build(story)
    return filepath


def create_ablation_pdf(report: dict, filepath: Path) -> Path:
    """Render the table built by eval_metrics.ablation_report."""
    filepath = Path(filepath)
    filepath.parent.mkdir(parents=True, exist_ok=True)
    doc = _document(filepath)
    style = _styles()
    story = [Paragraph("Ablation", style["title"]),
             Paragraph(f"Reference arm: {report['baseline']}; seeds: "
                       f"{', '.join(str(s) for s in report['seeds'])}", style["body"]),
             Spacer(1, 0.15*inch)]

    for metric in ("success", "spl"):
        story.append(Paragraph(metric.upper() if metric == "spl" else metric.title(), style["heading"]))
        rows = [["Arm", "Difficulty", "Mean", "Min", "Max", "Diff"]]
        for row in report["rows"]:
            rows.append([row["arm"], row["difficulty"]] +
                        [_fmt(row.get(f"{metric}_{stat}")) for stat in ("mean", "min", "max", "diff")])
        story.append(_table(rows, [1.4*inch, 1.2*inch, 1*inch, 1*inch, 1*inch, 1*inch]))

    doc.build(story)
    return filepath
