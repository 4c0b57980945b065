import numpy as np
import pytest

from conftest import make_image
from spnlens.darkframe import DarkFrame, build_dark_frame, dark_as_image, subtract_dark
from spnlens.errors import CalibrationMismatchError, ProtocolError, ValidationError
from spnlens.simulator import CaptureRequest, LensProfile, NoiseSources, SensorProfile, render_frame


@pytest.fixture
def frame(rng):
    return make_image(rng.random((8, 8)) * 0.1, temperature=30.0)


def test_single_dark_is_itself(frame):
    np.testing.assert_array_equal(build_dark_frame([frame]).pixels, frame.pixels)


def test_identical_darks(frame):
    d = build_dark_frame([frame] * 7)
    np.testing.assert_allclose(d.pixels, frame.pixels, atol=1e-15)
    assert d.frame_count == 7


def test_empty():
    with pytest.raises(ProtocolError):
        build_dark_frame([])


def test_temperature_spread(frame):
    warm = make_image(frame.pixels, temperature=31.5)
    with pytest.raises(CalibrationMismatchError) as err:
        build_dark_frame([frame, warm])
    assert err.value.field == "temperature"


def test_exposure_mismatch(frame):
    other = make_image(frame.pixels, integration_time=0.5)
    with pytest.raises(CalibrationMismatchError) as err:
        build_dark_frame([frame, other])
    assert err.value.field == "integration_time"


def test_shape_mismatch(frame):
    with pytest.raises(ValidationError):
        build_dark_frame([frame, make_image(np.zeros((8, 10)))])


def test_recovers_simulated_dark_map():
    sensor = SensorProfile(seed=5, height=64, width=64,
                           noise=NoiseSources(shot=False, read_std=0.001, adc_bits=None))
    t = 0.01
    darks = [render_frame(sensor, LensProfile.pinhole(), CaptureRequest(scene=0.0, integration_time=t, frame_seed=i))
             for i in range(30)]
    d = build_dark_frame(darks)
    rms = np.sqrt(np.mean((d.pixels - sensor.dark_level(30.0, t)) ** 2))
    assert rms == pytest.approx(0.001 / np.sqrt(30), rel=0.1)


class TestSubtract:
    def test_self_is_zero(self, frame):
        d = build_dark_frame([frame])
        assert np.all(subtract_dark(dark_as_image(d), d).pixels == 0)
        assert np.all(subtract_dark(frame, d).pixels == 0)

    def test_zero_dark_is_identity(self, frame):
        d = build_dark_frame([make_image(np.zeros((8, 8)))])
        np.testing.assert_array_equal(subtract_dark(frame, d).pixels, frame.pixels)

    def test_clamps_at_zero(self, frame):
        d = build_dark_frame([make_image(np.full((8, 8), 0.2))])
        assert subtract_dark(frame, d).pixels.min() == 0.0

    @pytest.mark.parametrize("kw,field", [
        ({"temperature": 35.0}, "temperature"),
        ({"integration_time": 0.1}, "integration_time"),
    ])
    def test_mismatch_names_field(self, frame, kw, field):
        d = build_dark_frame([frame])
        with pytest.raises(CalibrationMismatchError) as err:
            subtract_dark(make_image(frame.pixels, **kw), d)
        assert err.value.field == field

    def test_dimension_mismatch(self, frame):
        d = build_dark_frame([frame])
        with pytest.raises(CalibrationMismatchError) as err:
            subtract_dark(make_image(np.zeros((8, 10))), d)
        assert err.value.field == "dimensions"

    def test_layout_mismatch(self, frame):
        d = build_dark_frame([frame])
        with pytest.raises(CalibrationMismatchError) as err:
            subtract_dark(make_image(frame.pixels, layout="BGGR"), d)
        assert err.value.field == "cfa_layout"


def test_roundtrip(tmp_path, rng):
    d = build_dark_frame([make_image(rng.random((8, 8)) * 0.01, camera_id="camX", temperature=30.0)])
    path = d.save(tmp_path / d.filename)
    assert path.name.startswith("camX_T30_t")
    back = DarkFrame.load(path)
    assert back.pixels.tobytes() == d.pixels.tobytes()
    assert (back.temperature, back.integration_time, back.camera_id) == (d.temperature, d.integration_time, "camX")
