"""Five training seeds on one dataset; mean and std of Aff-F and AUC-ROC."""
from _common import emit, parser, setup

from scatterdet import experiments as ex


def main():
    args = parser(__doc__).parse_args()
    ds, cfg = setup(args)
    rows = ex.stability(ds, cfg)
    emit(rows, args.out)
    print(ex.summarize(rows))


if __name__ == "__main__":
    main()
