"""Systems x scenarios tables from the acceptance sweep (run it first with the CLI or the acceptance tests)."""
import sys
from pathlib import Path

from clsum.experiment import collect_reports, compare_tables, render_compare

root = Path(sys.argv[1] if len(sys.argv) > 1 else "artifacts/sweep/runs")
reports = collect_reports(root)
if not reports:
    sys.exit(f"no reports under {root}")
print(render_compare(compare_tables(reports)))
