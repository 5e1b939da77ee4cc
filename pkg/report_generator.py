from reportlab.lib.pagesizes import letter
from reportlab.lib.styles import getSampleStyleSheet, ParagraphStyle
from reportlab.lib.units import inch
from reportlab.platypus import SimpleDocTemplate, Paragraph, Spacer, Table, TableStyle, HRFlowable, KeepTogether
from reportlab.lib.enums import TA_CENTER, TA_JUSTIFY
from reportlab.lib.colors import black, darkblue, grey, lightgrey, white
from typing import Dict, Optional

from validity import METRICS, ValidityReport

METRIC_TITLES = {'dunn': 'Dunn', 'db': 'Davies-Bouldin', 'silhouette': 'Silhouette'}
LARGER_IS_BETTER = {'dunn': True, 'db': False, 'silhouette': True}


class PDFReportGenerator:
    def __init__(self):
        self.styles = getSampleStyleSheet()
        self._setup_custom_styles()

    def _setup_custom_styles(self):
        # Report title
        self.styles.add(ParagraphStyle(
            name='ReportTitle',
            parent=self.styles['Normal'],
            fontSize=20,
            spaceAfter=4,
            spaceBefore=0,
            alignment=TA_CENTER,
            fontName='Helvetica-Bold',
            textColor=darkblue,
            leading=24
        ))

        # Run summary under the title
        self.styles.add(ParagraphStyle(
            name='RunInfo',
            parent=self.styles['Normal'],
            fontSize=10,
            spaceAfter=14,
            spaceBefore=0,
            alignment=TA_CENTER,
            fontName='Helvetica',
            textColor=grey,
            leading=12
        ))

        # Section headers with line
        self.styles.add(ParagraphStyle(
            name='SectionHeader',
            parent=self.styles['Normal'],
            fontSize=13,
            spaceAfter=6,
            spaceBefore=14,
            fontName='Helvetica-Bold',
            textColor=darkblue,
            leading=16
        ))

        self.styles.add(ParagraphStyle(
            name='Note',
            parent=self.styles['Normal'],
            fontSize=9,
            spaceAfter=4,
            spaceBefore=4,
            fontName='Helvetica-Oblique',
            alignment=TA_JUSTIFY,
            textColor=black,
            leading=11
        ))

    @staticmethod
    def _best_methods(reports: Dict[str, ValidityReport]) -> Dict[str, str]:
        best = {}
        for metric in METRICS:
            pick = max if LARGER_IS_BETTER[metric] else min
            best[metric] = pick(reports, key=lambda method: reports[method].mean(metric))
        return best

    def _metrics_table(self, reports: Dict[str, ValidityReport]) -> Table:
        best = self._best_methods(reports)
        rows = [['Method'] + [f"{METRIC_TITLES[m]} ({'higher' if LARGER_IS_BETTER[m] else 'lower'} is better)"
                              for m in METRICS]]
        for method, report in reports.items():
            row = [method]
            for metric in METRICS:
                cell = f'{report.mean(metric):.3f} ± {report.std(metric):.3f}'
                if best[metric] == method:
                    cell = f'<b>{cell}</b>'
                row.append(Paragraph(cell, self.styles['Normal']))
            rows.append(row)

        table = Table(rows, colWidths=[1.3 * inch] + [1.9 * inch] * len(METRICS))
        table.setStyle(TableStyle([
            ('BACKGROUND', (0, 0), (-1, 0), darkblue),
            ('TEXTCOLOR', (0, 0), (-1, 0), white),
            ('FONTNAME', (0, 0), (-1, 0), 'Helvetica-Bold'),
            ('FONTSIZE', (0, 0), (-1, 0), 8),
            ('VALIGN', (0, 0), (-1, -1), 'MIDDLE'),
            ('GRID', (0, 0), (-1, -1), 0.5, lightgrey),
        ]))
        return table

    def _config_table(self, config: dict) -> Table:
        keys = ['K', 'm', 'M', 'alpha', 'lambda_pm', 'epsilon', 'T', 'K_final', 'min_segment', 'runs', 'seed',
                'subsample', 'exact_metrics']
        rows = [[k, str(config[k])] for k in keys if k in config]
        # two key/value column pairs side by side
        half = (len(rows) + 1) // 2
        left, right = rows[:half], rows[half:] + [['', '']] * (2 * half - len(rows))
        table = Table([l + r for l, r in zip(left, right)], colWidths=[1.2 * inch, 1.8 * inch] * 2)
        table.setStyle(TableStyle([
            ('FONTNAME', (0, 0), (0, -1), 'Helvetica-Bold'),
            ('FONTNAME', (2, 0), (2, -1), 'Helvetica-Bold'),
            ('FONTSIZE', (0, 0), (-1, -1), 9),
            ('LINEBELOW', (0, 0), (-1, -1), 0.25, lightgrey),
        ]))
        return table

    def create_pdf_report(self, reports: Dict[str, ValidityReport], filename: str,
                          config: Optional[dict] = None, title: str = 'Superpixel Segmentation Comparison'):
        doc = SimpleDocTemplate(filename, pagesize=letter,
                                rightMargin=0.75 * inch, leftMargin=0.75 * inch,
                                topMargin=0.5 * inch, bottomMargin=0.75 * inch)

        story = [Paragraph(title, self.styles['ReportTitle'])]
        any_report = next(iter(reports.values()), None)
        if any_report is not None:
            sampling = 'exact' if any_report.subsample is None else f'subsample {any_report.subsample}'
            story.append(Paragraph(f'{any_report.runs} run(s), seeds {any_report.seeds}, {sampling}',
                                   self.styles['RunInfo']))

        if config:
            story.append(self._create_section_header('CONFIGURATION'))
            story.append(self._config_table(config))

        if reports:
            story.append(self._create_section_header('VALIDITY INDICES'))
            story.append(self._metrics_table(reports))
            story.append(Spacer(1, 6))
            story.append(Paragraph('Mean ± sample standard deviation over runs; the best value of each '
                                   'index is shown in bold.', self.styles['Note']))
            if any_report is not None and any_report.single_run:
                story.append(Paragraph('Single run: standard deviations are reported as 0.', self.styles['Note']))

        doc.build(story)
        return filename

    def _create_section_header(self, title):
        """Create a section header with a horizontal line underneath"""
        header_elements = []
        header_elements.append(Paragraph(title, self.styles['SectionHeader']))
        header_elements.append(HRFlowable(width="100%", thickness=1, color=darkblue,
                                          spaceAfter=6, spaceBefore=2))

        return KeepTogether(header_elements)
