"""Shared argument handling for the experiment scripts."""
import argparse
from pathlib import Path

from scatterdet import experiments as ex
from scatterdet.metrics import MetricReport


def parser(description: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--seed", type=int, default=0, help="dataset seed")
    p.add_argument("--epochs", type=int, default=None, help="override the desk epoch count")
    p.add_argument("--out", type=Path, default=None, help="optional CSV output path")
    return p


def setup(args):
    overrides = {} if args.epochs is None else {"epochs": args.epochs}
    return ex.desk_dataset(args.seed), ex.desk_config(**overrides)


def emit(rows, out) -> None:
    print(ex.format_rows(rows))
    if out is not None:
        ex.write_rows_csv(out, rows)
        print(f"wrote {out}")


def write_reports(path, named) -> None:
    lines = [MetricReport.csv_header(["run"])] + [rep.csv_row([name]) for name, rep in named]
    path.write_text("\n".join(lines) + "\n")
    print(f"wrote {path}")
