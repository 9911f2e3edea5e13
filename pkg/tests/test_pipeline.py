import math

import numpy as np
import pytest
import torch

from swepipe import checkpoint, denoiser, forge, pipeline, recon, training


@pytest.fixture(scope="module")
def desk_ds():
    return forge.generate_dataset(
        3, seed=21, preset="desk", split_fractions=(0.34, 0.33, 0.33)
    )


def untrained_ckpts(tmp_path, layout, channels=4):
    rcfg = recon.ReconConfig(
        mode="patch", input_shape=(layout.frames_t, 33, 10), base_channels=channels
    )
    rnet = recon.build_recon(rcfg)
    rpath = tmp_path / "recon.swec"
    checkpoint.save_checkpoint(
        rpath, rnet.state_dict(), rcfg.to_dict(),
        {"steps": 0, "config": rcfg.to_dict()},
    )
    dcfg = denoiser.DenoiserConfig(base_channels=8, blocks_per_stage=(2, 2, 2))
    dnet = denoiser.build_denoiser(dcfg)
    dpath = tmp_path / "denoiser.swec"
    checkpoint.save_checkpoint(
        dpath, dnet.state_dict(), dcfg.to_dict(),
        {"steps": 0, "config": dcfg.to_dict()},
    )
    return str(rpath), str(dpath)


def infer_cfg():
    return training.TrainConfig(
        stage="recon", mode="patch", patch_ap=33, patch_lp=10, patch_stride=(11, 4)
    )


class TestPrimaryReconstruction:
    def test_merged_shape_and_finite(self, desk_ds, tmp_path):
        rpath, _ = untrained_ckpts(tmp_path, desk_ds.layout)
        net = pipeline.load_net_auto(rpath)
        y = pipeline.primary_reconstruction(
            net, desk_ds.samples[0], desk_ds.layout, infer_cfg()
        )
        assert y.shape == (64, 24)
        assert np.isfinite(y).all()

    def test_full_mode_region(self, desk_ds):
        rcfg = recon.ReconConfig(
            mode="full", input_shape=(32, 64, 16), base_channels=4
        )
        net = recon.build_recon(rcfg)
        net.eval()
        y = pipeline.reconstruct_region(
            net, desk_ds.samples[0].volumes[0], infer_cfg()
        )
        assert y.shape == (64, 16)


class TestInfer:
    def test_untrained_cascade(self, desk_ds, tmp_path):
        rpath, dpath = untrained_ckpts(tmp_path, desk_ds.layout)
        rnet = pipeline.load_net_auto(rpath)
        dnet = pipeline.load_net_auto(dpath)
        result = pipeline.infer(
            rnet, dnet, desk_ds.samples[0], desk_ds.layout, infer_cfg()
        )
        assert result.untrained
        assert result.y_prime_kpa.shape == (64, 24)
        assert result.y_kpa.shape == (64, 24)
        assert result.mask.shape == (64, 24)
        assert np.isfinite(result.y_kpa).all()
        assert result.metrics is not None
        assert result.metrics["untrained"] is True

    def test_repeat_inference_bit_identical(self, desk_ds, tmp_path):
        rpath, dpath = untrained_ckpts(tmp_path, desk_ds.layout)
        rnet = pipeline.load_net_auto(rpath)
        dnet = pipeline.load_net_auto(dpath)
        a = pipeline.infer(rnet, dnet, desk_ds.samples[0], desk_ds.layout, infer_cfg())
        b = pipeline.infer(rnet, dnet, desk_ds.samples[0], desk_ds.layout, infer_cfg())
        np.testing.assert_array_equal(a.y_kpa, b.y_kpa)
        np.testing.assert_array_equal(a.mask, b.mask)


class TestEvaluate:
    def test_report_and_plots(self, desk_ds, tmp_path):
        rpath, dpath = untrained_ckpts(tmp_path, desk_ds.layout)
        rnet = pipeline.load_net_auto(rpath)
        dnet = pipeline.load_net_auto(dpath)
        out = tmp_path / "eval"
        report = pipeline.evaluate(
            rnet, dnet, desk_ds, str(out), infer_cfg(), split="test"
        )
        assert (out / "metrics.txt").exists()
        assert (out / "report.json").exists()
        pngs = list(out.glob("sample_*.png"))
        assert len(pngs) == report["n"] == len(desk_ds.split("test"))
        agg = report["aggregate"]
        for col in ("mae_fg", "iou", "hd"):
            assert col in agg
        # aggregate mean equals the manual mean over rows
        vals = [
            r["mae_fg"] for r in report["rows"] if not isinstance(r["mae_fg"], str)
        ]
        assert agg["mae_fg"]["mean"] == pytest.approx(float(np.mean(vals)))

    def test_empty_split_rejected(self, desk_ds, tmp_path):
        rpath, dpath = untrained_ckpts(tmp_path, desk_ds.layout)
        rnet = pipeline.load_net_auto(rpath)
        dnet = pipeline.load_net_auto(dpath)
        with pytest.raises(ValueError, match="empty"):
            pipeline.evaluate(
                rnet, dnet, desk_ds, str(tmp_path / "x"), infer_cfg(), split="nope"
            )


def test_paper_geometry_end_to_end_shapes(tmp_path):
    # 4 x (70, 168, 16) in -> 168 x 40 primary, denoised, mask out
    ds = forge.generate_dataset(
        1, seed=33, preset="paper", split_fractions=(1.0, 0.0, 0.0)
    )
    assert ds.samples[0].volumes.shape == (4, 70, 168, 16)
    rcfg = recon.ReconConfig(mode="patch", input_shape=(70, 63, 10), base_channels=4)
    rnet = recon.build_recon(rcfg)
    rpath = tmp_path / "r.swec"
    checkpoint.save_checkpoint(
        rpath, rnet.state_dict(), rcfg.to_dict(), {"steps": 0, "config": rcfg.to_dict()}
    )
    dcfg = denoiser.DenoiserConfig(base_channels=8, blocks_per_stage=(2, 2, 2))
    dnet_b = denoiser.build_denoiser(dcfg)
    dpath = tmp_path / "d.swec"
    checkpoint.save_checkpoint(
        dpath, dnet_b.state_dict(), dcfg.to_dict(), {"steps": 0, "config": dcfg.to_dict()}
    )
    rnet = pipeline.load_net_auto(str(rpath))
    dnet = pipeline.load_net_auto(str(dpath))
    cfg = training.TrainConfig(
        stage="recon", mode="patch", patch_ap=63, patch_lp=10, patch_stride=(21, 4)
    )
    result = pipeline.infer(rnet, dnet, ds.samples[0], ds.layout, cfg)
    assert result.y_prime_kpa.shape == (168, 40)
    assert result.y_kpa.shape == (168, 40)
    assert result.mask.shape == (168, 40)
