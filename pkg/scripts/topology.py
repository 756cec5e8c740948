"""Lookback, random and KNN graphs: quality and throughput."""
from _common import emit, parser, setup

from scatterdet import experiments as ex


def main():
    args = parser(__doc__).parse_args()
    ds, cfg = setup(args)
    emit(ex.topology_comparison(ds, cfg), args.out)


if __name__ == "__main__":
    main()
