import logging
import os
import re

from reportlab.lib import colors
from reportlab.lib.enums import TA_CENTER, TA_JUSTIFY
from reportlab.lib.pagesizes import A4, landscape
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.lib.units import inch
from reportlab.platypus import (
    Image,
    KeepTogether,
    PageBreak,
    Paragraph,
    SimpleDocTemplate,
    Spacer,
    Table,
    TableStyle,
)

logger = logging.getLogger(__name__)

PAGE = landscape(A4)
INK = colors.HexColor("#1e293b")
ACCENT = colors.HexColor("#0f766e")
HEADER_FILL = colors.HexColor("#ecfdf5")
RULE = colors.HexColor("#cbd5e1")

styles = getSampleStyleSheet()


def _style(name, parent="Normal", **kwargs):
    styles.add(ParagraphStyle(name=name, parent=styles[parent], **kwargs))


_style("CoverTitle", fontName="Helvetica-Bold", fontSize=24, leading=30, textColor=INK, alignment=TA_CENTER, spaceAfter=16)
_style("CoverSubtitle", fontName="Helvetica", fontSize=13, textColor=colors.gray, alignment=TA_CENTER, spaceAfter=40)
_style("RunH1", "Heading1", fontName="Helvetica-Bold", fontSize=16, leading=20, textColor=ACCENT,
       spaceBefore=16, spaceAfter=8, keepWithNext=True)
_style("RunH2", "Heading2", fontName="Helvetica-Bold", fontSize=12, leading=16, textColor=INK,
       spaceBefore=12, spaceAfter=6, keepWithNext=True)
_style("RunBody", fontName="Helvetica", fontSize=9.5, leading=14, alignment=TA_JUSTIFY, textColor=INK, spaceAfter=8)
_style("RunBullet", fontSize=9.5, leading=14, leftIndent=18, bulletIndent=8, spaceAfter=4, textColor=INK)
_style("RunCell", fontName="Helvetica", fontSize=7.5, leading=9, textColor=INK)


def clean_text(text):
    """ASCII-only, XML-escaped, with **bold** and `code` turned into reportlab markup."""
    if not text:
        return ""
    text = text.encode("ascii", "ignore").decode("ascii").strip()
    text = text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
    text = re.sub(r"\*\*(.*?)\*\*", r"<b>\1</b>", text)
    text = re.sub(r"`(.*?)`", r'<font name="Courier">\1</font>', text)
    return text


def parse_markdown_table(table_lines):
    rows = []
    for line in table_lines:
        if set(line.replace("|", "").strip()) <= {"-", ":", " "}:
            continue
        rows.append([Paragraph(clean_text(cell), styles["RunCell"]) for cell in line.strip().strip("|").split("|")])
    if not rows:
        return None

    usable = PAGE[0] - 1.6 * inch
    first = min(usable * 0.3, 2.2 * inch)
    rest = (usable - first) / max(len(rows[0]) - 1, 1)
    table = Table(rows, colWidths=[first] + [rest] * (len(rows[0]) - 1), repeatRows=1)
    table.setStyle(TableStyle([
        ("BACKGROUND", (0, 0), (-1, 0), HEADER_FILL),
        ("ROWBACKGROUNDS", (0, 1), (-1, -1), [colors.white, colors.HexColor("#f8fafc")]),
        ("GRID", (0, 0), (-1, -1), 0.4, RULE),
        ("VALIGN", (0, 0), (-1, -1), "MIDDLE"),
        ("TOPPADDING", (0, 0), (-1, -1), 3),
        ("BOTTOMPADDING", (0, 0), (-1, -1), 3),
    ]))
    return table


def _page_decorations(canvas, doc):
    canvas.saveState()
    canvas.setFont("Helvetica", 8)
    canvas.setFillColor(colors.gray)
    canvas.drawString(0.8 * inch, 0.5 * inch, getattr(doc, "footer_text", ""))
    canvas.drawRightString(PAGE[0] - 0.8 * inch, 0.5 * inch, f"Page {canvas.getPageNumber()}")
    canvas.setStrokeColor(RULE)
    canvas.line(0.8 * inch, PAGE[1] - 0.6 * inch, PAGE[0] - 0.8 * inch, PAGE[1] - 0.6 * inch)
    canvas.restoreState()


def convert_markdown_to_pdf(markdown_text, output_path, title="Latent assimilation run", subtitle="", chart_list=None):
    """
    Renders the run summary: cover page, the markdown body (headings,
    bullets, pipe tables, paragraphs) and a chart appendix.
    Returns the path, or None when reportlab could not build the document.
    """
    logger.info(f"🎨 Rendering PDF report to {output_path}")
    doc = SimpleDocTemplate(str(output_path), pagesize=PAGE, rightMargin=0.8 * inch, leftMargin=0.8 * inch,
                            topMargin=0.8 * inch, bottomMargin=0.8 * inch)
    doc.footer_text = title

    story = [Spacer(1, 1.6 * inch), Paragraph(clean_text(title), styles["CoverTitle"])]
    if subtitle:
        story.append(Paragraph(clean_text(subtitle), styles["CoverSubtitle"]))
    story.append(PageBreak())

    table_buffer = []

    def flush_table():
        if table_buffer:
            table = parse_markdown_table(table_buffer)
            if table is not None:
                story.extend([Spacer(1, 6), table, Spacer(1, 10)])
            table_buffer.clear()

    for line in markdown_text.split("\n"):
        line = line.strip()
        if line.startswith("|"):
            table_buffer.append(line)
            continue
        flush_table()
        if not line or (line.startswith("![") and "](" in line):
            continue
        if line.startswith("#"):
            level = len(line) - len(line.lstrip("#"))
            story.append(Paragraph(clean_text(line.lstrip("#")), styles["RunH1" if level <= 2 else "RunH2"]))
        elif line.startswith(("- ", "* ")):
            story.append(Paragraph(f"• {clean_text(line[2:])}", styles["RunBullet"]))
        else:
            story.append(Paragraph(clean_text(line), styles["RunBody"]))
    flush_table()

    if chart_list:
        story.append(PageBreak())
        story.append(Paragraph("Charts", styles["RunH1"]))
        for caption, img_path in chart_list:
            if not os.path.exists(img_path):
                continue
            img = Image(img_path)
            width = 7.5 * inch
            img.drawHeight = width * img.imageHeight / float(img.imageWidth)
            img.drawWidth = width
            story.append(KeepTogether([Paragraph(clean_text(caption), styles["RunH2"]), img, Spacer(1, 12)]))

    try:
        doc.build(story, onFirstPage=_page_decorations, onLaterPages=_page_decorations)
    except (OSError, ValueError) as e:
        logger.error(f"❌ PDF generation failed: {e}")
        return None
    logger.info(f"✅ PDF saved: {output_path}")
    return output_path
