import csv
import io
import logging
import os

from common.constants import CSV_DIGITS, TOOL_NAME, TOOL_VERSION

logger = logging.getLogger(__name__)


class ResultTable:
    """Rectangular table of results with a provenance header."""

    def __init__(self, columns, rows=None, config_hash=None):
        """
        Initialize a table.

        Args:
            columns: Column names (sequence of strings)
            rows: Initial rows (each a sequence with one value per column, optional)
            config_hash: Hash of the config that produced the rows (string, optional)
        """
        self.columns = list(columns)
        self.rows = []
        self.config_hash = config_hash
        for row in rows or ():
            self.add_row(row)

    def add_row(self, row):
        row = list(row)
        if len(row) != len(self.columns):
            raise ValueError(f"row has {len(row)} values, table has {len(self.columns)} columns")
        self.rows.append(row)

    def column(self, name):
        index = self.columns.index(name)
        return [row[index] for row in self.rows]

    def provenance(self):
        header = {"tool": TOOL_NAME, "version": TOOL_VERSION}
        if self.config_hash:
            header["config_hash"] = self.config_hash
        return header

    def to_csv(self):
        """Render the table as CSV text (provenance as leading '#' lines)."""
        buffer = io.StringIO()
        for key, value in self.provenance().items():
            buffer.write(f"# {key}={value}\n")
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([_format_cell(value) for value in row])
        return buffer.getvalue()

    def to_dict(self):
        return {
            "columns": self.columns,
            "rows": self.rows,
            **self.provenance(),
        }

    def write(self, path):
        """Write the CSV to `path`, creating parent directories."""
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(self.to_csv())
        logger.info(f"Wrote {len(self.rows)} rows to {path}")
        return path

    @staticmethod
    def from_csv(text):
        """Create a ResultTable from CSV text written by to_csv."""
        lines = text.splitlines()
        header = {}
        body = []
        for line in lines:
            if line.startswith("# ") and not body:
                key, _, value = line[2:].partition("=")
                header[key] = value
            else:
                body.append(line)
        try:
            reader = csv.reader(body)
            columns = next(reader)
            rows = [[_parse_cell(cell) for cell in row] for row in reader]
        except StopIteration:
            raise ValueError("CSV has no header row")
        return ResultTable(columns, rows, config_hash=header.get("config_hash"))


def _format_cell(value):
    if hasattr(value, "item"):
        value = value.item()
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, f".{CSV_DIGITS}g")
    return str(value)


def _parse_cell(cell):
    if cell in ("true", "false"):
        return cell == "true"
    for kind in (int, float):
        try:
            return kind(cell)
        except ValueError:
            pass
    return cell
