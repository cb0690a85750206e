from sinefm.cost import model_cost
from sinefm.network import convert_to_sinefm, tiny_vgg
from sinefm.plotting import (plot_ablation, plot_cost_comparison, plot_history, plot_sweep,
                             plot_transforms)
from sinefm.train import AblationTable, EpochRecord, History, SweepCurve

PNG = b"\x89PNG"


def test_every_figure_writes_png(tmp_path):
    std, sfm = model_cost(tiny_vgg()), model_cost(convert_to_sinefm(tiny_vgg(), 16, 5))
    paths = [
        plot_cost_comparison(std, sfm, tmp_path / "a" / "cost.png", title="tiny-vgg"),
        plot_ablation(AblationTable([("sinusoidal", 0, 0.9), ("sinusoidal", 1, 0.8),
                                     ("gaussian", 0, 0.7)]), tmp_path / "abl.png"),
        plot_sweep(SweepCurve("c_s", [("1", 0.5, 10, 100), ("4", 0.7, 40, 300)]), tmp_path / "s.png"),
        plot_history(History([EpochRecord(0, 1.2, 0.4, 1e-3), EpochRecord(1, 0.8, 0.7, 0.0)]),
                     tmp_path / "h.png"),
        plot_transforms(tmp_path / "t.png", seed=3),
    ]
    for p in paths:
        assert p.read_bytes()[:4] == PNG
