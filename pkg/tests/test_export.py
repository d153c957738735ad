import numpy as np
import pytest

from maclearn.campaign import run_campaign
from maclearn.config import ExperimentConfig, RunMode
from maclearn.errors import ConfigError
from maclearn.export import (collect_curves, convergence_episode,
                             export_curves, moving_average)


def micro_cfg(**kw):
    base = dict(buffer_size=1, memory_len=2, episode_len=4,
                episodes_per_lifetime=5, max_lifetimes=2,
                policy_hidden=(4, 4), convergence_stop=False, seeds=(0, 1))
    base.update(kw)
    return ExperimentConfig(**base)


class TestMovingAverage:
    def test_window_one_is_identity(self):
        series = [3.0, 1.0, 4.0, 1.5]
        assert np.array_equal(moving_average(series, 1), np.asarray(series))

    def test_constant_series_unchanged(self):
        series = [50.0] * 300
        out = moving_average(series, 100)
        assert np.array_equal(out, np.asarray(series))

    def test_trailing_window_values(self):
        out = moving_average([0.0, 100.0, 100.0, 100.0], 2)
        assert list(out) == [0.0, 50.0, 100.0, 100.0]

    def test_bad_window(self):
        with pytest.raises(ConfigError):
            moving_average([1.0], 0)


class TestCollectAndExport:
    def test_mean_of_constant_seeds_is_exact(self, tmp_path):
        cfg = micro_cfg(mode=RunMode.RANDOM_UNIFORM, policy_lr=0.0)
        run_dir = run_campaign(cfg, tmp_path / "run")
        curves = collect_curves([run_dir], window=10)
        curve = curves[0]
        assert curve.mode == "random-uniform"
        assert curve.n_seeds == 2
        # the across-seed mean of two identical-length series is exact where
        # both seeds produced the same value
        assert curve.mean.size == 10

    def test_exact_constant_mean_across_seeds(self, tmp_path):
        # two campaigns whose pct columns are forced constant
        cfg = micro_cfg(mode=RunMode.RANDOM_UNIFORM)
        run_dir = run_campaign(cfg, tmp_path / "run")
        path = run_dir / "train_metrics.csv"
        lines = path.read_text().splitlines()
        header = lines[0].split(",")
        idx = header.index("pct_delivered")
        fixed = []
        for line in lines[1:]:
            parts = line.split(",")
            parts[idx] = "37.5"
            fixed.append(",".join(parts))
        path.write_text("\n".join([lines[0]] + fixed) + "\n")
        curve = collect_curves([run_dir], window=3)[0]
        assert np.all(curve.mean == 37.5)
        assert np.all(curve.smoothed == 37.5)
        assert np.all(curve.std == 0.0)

    def test_export_file_format(self, tmp_path):
        cfg = micro_cfg(mode=RunMode.RANDOM_UNIFORM)
        run_dir = run_campaign(cfg, tmp_path / "run")
        out = export_curves([run_dir], tmp_path / "curves.csv", window=7)
        lines = out.read_text().splitlines()
        assert lines[0] == "# smoothing_window=7"
        assert lines[1] == "mode,episode,mean_pct,std_pct,smoothed_mean_pct"
        assert len(lines) == 2 + 10
        first = lines[2].split(",")
        assert first[0] == "random-uniform"
        assert first[1] == "0"

    def test_refuses_mixed_packet_counts(self, tmp_path):
        a = run_campaign(micro_cfg(mode=RunMode.RANDOM_UNIFORM, seeds=(0,)),
                         tmp_path / "a")
        b = run_campaign(micro_cfg(mode=RunMode.RANDOM_UNIFORM, seeds=(0,),
                                   buffer_size=2), tmp_path / "b")
        with pytest.raises(ConfigError, match="refusing to merge"):
            export_curves([a, b], tmp_path / "curves.csv")

    def test_merges_modes_across_campaigns(self, tmp_path):
        a = run_campaign(micro_cfg(mode=RunMode.RANDOM_UNIFORM, seeds=(0,)),
                         tmp_path / "a")
        b = run_campaign(micro_cfg(mode=RunMode.EXTRINSIC_NPS, seeds=(1,)),
                         tmp_path / "b")
        curves = collect_curves([a, b])
        assert sorted(c.mode for c in curves) == ["extrinsic-nps",
                                                  "random-uniform"]


class TestConvergenceEpisode:
    def test_step_curve_converges_at_the_jump(self):
        series = [10.0] * 600 + [100.0] * 1000
        assert convergence_episode(series) == 600

    def test_flat_curve_converges_immediately(self):
        assert convergence_episode([80.0] * 1200) == 0

    def test_never_reaches_threshold(self):
        series = [10.0] * 1100 + [100.0] * 400  # plateau high, hold short
        assert convergence_episode(series) is None

    def test_short_series(self):
        assert convergence_episode([50.0] * 100) is None

    def test_dip_resets_hold(self):
        series = ([10.0] * 500 + [100.0] * 400 + [10.0]
                  + [100.0] * 700)
        assert convergence_episode(series) == 901
