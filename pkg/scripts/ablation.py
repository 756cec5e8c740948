"""Full model against each single-component ablation."""
from _common import parser, setup, write_reports

from scatterdet import experiments as ex
from scatterdet.metrics import format_table


def main():
    args = parser(__doc__).parse_args()
    ds, cfg = setup(args)
    rows = ex.ablation(ds, cfg)
    print(format_table([r for _, r in rows], [name for name, _ in rows]))
    if args.out is not None:
        write_reports(args.out, rows)


if __name__ == "__main__":
    main()
