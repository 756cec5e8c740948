"""Embedding spread of normal vs anomalous points under growing input noise."""
from _common import emit, parser, setup

from scatterdet import experiments as ex


def main():
    args = parser(__doc__).parse_args()
    ds, cfg = setup(args)
    run = ex.detection_run(ds, cfg, baseline=False)
    emit(ex.scatter_rows(ex.scatter_sweep(run.state, ds)), args.out)


if __name__ == "__main__":
    main()
