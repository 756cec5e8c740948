"""Detection quality for each scatter-center initialisation."""
import dataclasses

from _common import emit, parser, setup

from scatterdet import experiments as ex

STRATEGIES = ("random_in_ball", "zero", "fixed_radius", "multi_center")


def main():
    args = parser(__doc__).parse_args()
    ds, cfg = setup(args)
    rows = []
    for s in STRATEGIES:
        run = ex.detection_run(ds, dataclasses.replace(cfg, center_strategy=s), baseline=False)
        rows.append({"center": s, "aff_f": run.report.aff_f, "auc_roc": run.report.auc_roc})
    emit(rows, args.out)


if __name__ == "__main__":
    main()
