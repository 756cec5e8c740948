"""Affiliation vs point-wise F1 for shifted copies of bursty and long-segment label streams."""
from _common import emit, parser

from scatterdet import experiments as ex


def main():
    p = parser(__doc__)
    p.add_argument("--length", type=int, default=4000)
    args = p.parse_args()
    streams = ex.sensitivity_streams(args.length, args.seed)
    emit([r for name, y in streams.items() for r in ex.sensitivity_table(y, name)], args.out)


if __name__ == "__main__":
    main()
