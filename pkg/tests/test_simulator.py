import json

import numpy as np
import pytest

from spnlens.errors import ProtocolError, ValidationError
from spnlens.fingerprint import build_reference, image_residues, match
from spnlens.raster import PINHOLE, load_raw
from spnlens.simulator import (
    CaptureRequest,
    LensProfile,
    NoiseSources,
    SensorProfile,
    ground_truth_energies,
    load_manifest,
    quantize,
    render_dataset,
    render_expected,
    render_frame,
    scenario_profiles,
)

SILENT = NoiseSources(shot=False, read_std=0.0, adc_bits=None)
FLAT_LENS = LensProfile(seed=1, aberration_amp=0.0, vignette_strength=0.0)


def test_noiseless_constant():
    sensor = SensorProfile(seed=1, height=16, width=16, prnu_std=0.0, dark_rate_mean=0.0,
                           noise=NoiseSources(shot=False, read_std=0.0, adc_bits=10))
    img = render_frame(sensor, FLAT_LENS, CaptureRequest(scene=0.4))
    assert np.all(img.pixels == quantize(np.array(0.4), 10))


class TestDark:
    sensor = SensorProfile(seed=2, height=16, width=16, dark_rate_mean=3.0, dark_rate_std_frac=0.0, noise=SILENT)

    def test_closed_form(self):
        t = 0.01
        img = render_frame(self.sensor, LensProfile.pinhole(), CaptureRequest(scene=0.0, integration_time=t))
        np.testing.assert_allclose(img.pixels, 3.0 * t, rtol=1e-15)

    def test_doubling(self):
        t = 0.01
        cold = render_frame(self.sensor, LensProfile.pinhole(), CaptureRequest(0.0, t, 30.0)).pixels.mean()
        warm = render_frame(self.sensor, LensProfile.pinhole(), CaptureRequest(0.0, t, 36.0)).pixels.mean()
        assert warm / cold == pytest.approx(2.0, rel=0.01)

    def test_spatial_dark_map(self):
        s = SensorProfile(seed=3, height=64, width=64, noise=SILENT)
        assert s.dark_map.std() / s.dark_map.mean() == pytest.approx(0.5, rel=0.1)
        assert s.dark_map.min() >= 0


class TestDeterminism:
    sensor = SensorProfile(seed=4, height=32, width=32)
    lens = LensProfile(seed=5)

    def test_same_seed_bit_identical(self):
        a = render_frame(self.sensor, self.lens, CaptureRequest(frame_seed=3))
        b = render_frame(SensorProfile(seed=4, height=32, width=32), LensProfile(seed=5), CaptureRequest(frame_seed=3))
        assert a.pixels.tobytes() == b.pixels.tobytes()

    def test_frame_seed_changes_noise_only(self):
        a = render_frame(self.sensor, self.lens, CaptureRequest(frame_seed=1))
        b = render_frame(self.sensor, self.lens, CaptureRequest(frame_seed=2))
        assert not np.array_equal(a.pixels, b.pixels)
        quiet = SensorProfile(seed=4, height=32, width=32, noise=SILENT)
        c = render_frame(quiet, self.lens, CaptureRequest(frame_seed=1))
        d = render_frame(quiet, self.lens, CaptureRequest(frame_seed=2))
        assert np.array_equal(c.pixels, d.pixels)


def test_shot_noise_variance():
    q, s = 10000.0, 0.5
    sensor = SensorProfile(seed=6, height=32, width=32, noise=NoiseSources(full_well=q, read_std=0.0, adc_bits=None))
    frames = np.stack([render_frame(sensor, FLAT_LENS, CaptureRequest(scene=s, frame_seed=i)).pixels
                       for i in range(12)])
    var = frames.var(axis=0, ddof=1).mean()
    expected = render_expected(sensor, FLAT_LENS, CaptureRequest(scene=s)).mean() / q
    assert var == pytest.approx(expected, rel=0.1)


class TestAberrationField:
    def test_normalised(self):
        h = LensProfile(seed=8).aberration_field((128, 128))
        assert abs(h.mean()) < 1e-12
        assert h.std() == pytest.approx(1.0, rel=1e-9)

    def test_high_pass(self):
        lens = LensProfile(seed=8, cutoff=0.1)
        spec = np.abs(np.fft.fft2(lens.aberration_field((128, 128)))) ** 2
        f = np.hypot(np.fft.fftfreq(128)[:, None], np.fft.fftfreq(128)[None, :])
        assert spec[f < 0.1].sum() < 1e-20 * spec.sum()

    def test_seeded(self):
        a = LensProfile(seed=8).aberration_field((64, 64))
        assert np.array_equal(a, LensProfile(seed=8).aberration_field((64, 64)))
        assert not np.array_equal(a, LensProfile(seed=9).aberration_field((64, 64)))

    def test_dust_attenuates(self):
        t = LensProfile(seed=1, dust=[(10, 10, 3, 0.5)]).dust_transmission((32, 32))
        assert t[10, 10] == pytest.approx(0.5) and t[30, 30] == 1.0


class TestGroundTruth:
    sensor = SensorProfile(seed=11, noise=NoiseSources(full_well=100.0))

    def test_no_aberration_no_los(self):
        g = ground_truth_energies(self.sensor, LensProfile(seed=3, aberration_amp=0.0), draws=4)
        assert g.los == 0.0

    def test_los_power_scales_with_amplitude_squared(self):
        a = ground_truth_energies(self.sensor, LensProfile(seed=3, aberration_amp=0.005), draws=6)
        b = ground_truth_energies(self.sensor, LensProfile(seed=3, aberration_amp=0.01), draws=6)
        assert b.powers["los"] / a.powers["los"] == pytest.approx(4.0, rel=0.05)

    def test_default_ordering(self):
        sensors, lenses = scenario_profiles({})
        g = ground_truth_energies(sensors[0], lenses[0], reference_count=30, draws=6)
        assert g.prnu > g.los > g.fpn > 0

    def test_needs_two_draws(self):
        with pytest.raises(ValidationError):
            ground_truth_energies(self.sensor, LensProfile(seed=3), draws=1)


def test_lens_swap_contamination():
    noise = NoiseSources(full_well=100.0)
    cam_a, cam_b = SensorProfile(seed=1, noise=noise), SensorProfile(seed=2, noise=noise)
    lens = LensProfile(seed=9)
    ref = build_reference(image_residues(render_frame(cam_a, lens, CaptureRequest(frame_seed=i))) for i in range(30))
    with_lens = [match(ref, image_residues(render_frame(cam_b, lens, CaptureRequest(frame_seed=100 + i)))).value
                 for i in range(30)]
    pinhole = [match(ref, image_residues(render_frame(cam_b, LensProfile.pinhole(), CaptureRequest(frame_seed=100 + i)))).value
               for i in range(30)]
    assert np.mean(with_lens) > np.mean(pinhole)


class TestDataset:
    tiny = {"width": 8, "height": 8, "darks": 0, "heldout_darks": 0}

    def test_cardinality(self, tmp_path):
        m = render_dataset({**self.tiny, "cameras": 3, "lenses": 2, "frames": 150}, tmp_path)
        assert len(m["frames"]) == 1350
        assert len(list(tmp_path.rglob("*.raw"))) == 1350

    def test_seven_sets_per_camera(self, tmp_path):
        m = render_dataset({**self.tiny, "cameras": 3, "lenses": 6, "frames": 150}, tmp_path)
        assert len(m["frames"]) == 3150
        assert len({(f["camera_id"], f["lens_id"]) for f in m["frames"]}) == 21

    def test_no_frames(self, tmp_path):
        with pytest.raises(ProtocolError):
            render_dataset({**self.tiny, "frames": 0}, tmp_path)

    def test_manifest_binds_profiles(self, tmp_path):
        render_dataset({**self.tiny, "cameras": 2, "lenses": 1, "frames": 2, "darks": 3}, tmp_path)
        m = load_manifest(tmp_path)
        assert set(m["cameras"]) == {"cam0", "cam1"} and set(m["lenses"]) == {"lens0", PINHOLE}
        darks = [f for f in m["frames"] if f["kind"] == "dark"]
        assert len(darks) == 6
        f = m["frames"][0]
        img = load_raw(tmp_path / f["path"])
        assert img.meta.camera_id == f["camera_id"] and img.meta.lens_id == f["lens_id"]

    def test_regeneration_bit_identical(self, tmp_path):
        sc = {**self.tiny, "cameras": 1, "lenses": 1, "frames": 3}
        render_dataset(sc, tmp_path / "a")
        render_dataset(sc, tmp_path / "b")
        for p in (tmp_path / "a").rglob("*.raw"):
            assert p.read_bytes() == (tmp_path / "b" / p.relative_to(tmp_path / "a")).read_bytes()

    def test_scenario_overrides(self):
        sensors, lenses = scenario_profiles({"cameras": [{"id": "x", "seed": 5}], "lenses": 1,
                                             "include_pinhole": False, "lens": {"aberration_amp": 0.01}})
        assert sensors[0].camera_id == "x" and sensors[0].seed == 5
        assert [l.aberration_amp for l in lenses] == [0.01]
        assert json.loads(json.dumps(sensors[0].to_dict()))["noise"]["full_well"] == 100.0
