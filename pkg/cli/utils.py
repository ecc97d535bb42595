import logging
import os

from common.errors import ValidationError

logger = logging.getLogger(__name__)


def format_duration(seconds):
    """Format a duration in seconds as M:SS or H:MM:SS."""
    seconds = int(round(seconds))
    hours, rest = divmod(seconds, 3600)
    minutes, seconds = divmod(rest, 60)
    if hours:
        return f"{hours}:{minutes:02d}:{seconds:02d}"
    return f"{minutes}:{seconds:02d}"


def parse_orders(text):
    """Parse a comma-separated list of truncation orders, e.g. "0,1,2"."""
    try:
        orders = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ValidationError("--orders", f"expected comma-separated integers, got {text!r}")
    if not orders or any(order < 0 for order in orders):
        raise ValidationError("--orders", f"expected non-negative orders, got {text!r}")
    return sorted(set(orders))


def parse_floats(text, flag):
    try:
        values = [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ValidationError(flag, f"expected comma-separated numbers, got {text!r}")
    if not values:
        raise ValidationError(flag, "no values given")
    return values


def output_path(out_dir, subcommand, config_hash):
    return os.path.join(out_dir, f"{subcommand}-{config_hash}.csv")


def snapshot_indices(n_nodes, count):
    """`count` indices spread evenly over 0 .. n_nodes - 1, both ends included."""
    if count >= n_nodes:
        return list(range(n_nodes))
    step = (n_nodes - 1) / (count - 1)
    return sorted({int(round(i * step)) for i in range(count)})
