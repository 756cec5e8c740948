"""Fixed-threshold sweep: Aff-F moves with delta, AUC-ROC does not."""
import dataclasses

from _common import emit, parser, setup

from scatterdet import experiments as ex
from scatterdet.detector import delta_table


def main():
    args = parser(__doc__).parse_args()
    ds, cfg = setup(args)
    run = ex.detection_run(ds, cfg, baseline=False)
    emit([dataclasses.asdict(r) for r in delta_table(run.result.scores, run.truth)], args.out)


if __name__ == "__main__":
    main()
