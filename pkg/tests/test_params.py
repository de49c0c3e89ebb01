"""Parameter pack codec and text serialization."""

import numpy as np
import pytest

from windfuse.params import ModelStructure, ThetaCodec, read_theta, write_theta
from windfuse.synth import make_test_geometry, random_theta


def _codec_for(geom, structure=None):
    return ThetaCodec(geom.land_uses, [p.id for p in geom.nwp_points],
                      [s.id for s in geom.stations], structure)


def test_pack_unpack_roundtrip_exact():
    geom = make_test_geometry(3, 4, h=6, seed=1)
    theta = random_theta(geom, seed=2)
    codec = _codec_for(geom)
    x = codec.pack(theta)
    assert x.shape == (codec.size,)
    back = codec.unpack(x, random_theta(geom, seed=9))
    np.testing.assert_array_equal(codec.pack(back), x)
    # positives really live in log space
    i = codec.names.index("nwp_common_sill")
    assert np.isclose(np.exp(x[i]), theta.nwp_cov.common_sill)


def test_codec_names_are_unique_and_id_based():
    geom = make_test_geometry(2, 3, h=4, seed=0)
    codec = _codec_for(geom)
    assert len(set(codec.names)) == codec.size
    assert f"cond_site_sill.{geom.stations[0].id}" in codec.names
    assert f"nwp_site_gain.{geom.nwp_points[2].id}" in codec.names


def test_reduced_structures_drop_inactive_parameters():
    geom = make_test_geometry(2, 3, h=4, seed=0)
    full = _codec_for(geom)
    tmp = _codec_for(geom, ModelStructure.temporal())
    bias = _codec_for(geom, ModelStructure.bias())
    assert tmp.size < full.size
    assert bias.size < tmp.size
    assert not any(n.startswith("nwp_mix_") for n in tmp.names)
    assert not any(n.startswith("nb2_") for n in tmp.names)
    assert not any(n.startswith("tw_") for n in bias.names)
    assert not any("site_decay" in n for n in bias.names)
    assert any("site_nugget" in n for n in bias.names)


def test_unpack_keeps_inactive_fields_from_base():
    geom = make_test_geometry(2, 3, h=4, seed=3)
    codec = _codec_for(geom, ModelStructure.temporal())
    base = random_theta(geom, seed=4)
    x = codec.pack(base)
    other = codec.unpack(x + 0.1, base)
    # inactive values untouched
    np.testing.assert_array_equal(other.nwp_cov.tilt, base.nwp_cov.tilt)
    assert other.nwp_cov.common_sill == base.nwp_cov.common_sill


def test_pack_rejects_nonpositive_constrained_values():
    geom = make_test_geometry(2, 3, h=4, seed=5)
    theta = random_theta(geom, seed=5)
    theta.nwp_cov.common_sill = 0.0
    with pytest.raises(ValueError):
        _codec_for(geom).pack(theta)


def test_structure_registry():
    assert ModelStructure.by_name("full").name == "full"
    assert ModelStructure.by_name("temporal").name == "temporal"
    assert ModelStructure.by_name("bias").name == "bias"
    with pytest.raises(ValueError):
        ModelStructure.by_name("nope")


def test_theta_file_roundtrip_bit_exact(tmp_path):
    geom = make_test_geometry(3, 4, h=5, seed=6)
    theta = random_theta(geom, seed=7)
    codec = _codec_for(geom)
    se = np.abs(np.random.default_rng(0).normal(size=codec.size)) + 0.01
    path = write_theta(tmp_path / "theta.txt", theta, codec, h=geom.h,
                       center=geom.center, std_errors=se)
    theta2, codec2, meta = read_theta(path)
    np.testing.assert_array_equal(codec2.pack(theta2), codec.pack(theta))
    assert codec2.names == codec.names
    assert meta["h"] == geom.h
    assert meta["center"] == geom.center
    assert meta["structure"].name == "full"
    assert len(meta["se"]) == codec.size
    assert meta["se"]["nwp_harm_0"] == se[0]


def test_theta_file_errors(tmp_path):
    geom = make_test_geometry(2, 3, h=4, seed=8)
    theta = random_theta(geom, seed=8)
    codec = _codec_for(geom)
    path = write_theta(tmp_path / "t.txt", theta, codec, h=4,
                       center=geom.center)
    body = path.read_text()
    (tmp_path / "missing.txt").write_text(
        "\n".join(l for l in body.splitlines()
                  if not l.startswith("nwp_harm_3")) + "\n")
    from windfuse.core import PanelFormatError
    with pytest.raises(PanelFormatError):
        read_theta(tmp_path / "missing.txt")
    with pytest.raises(PanelFormatError):
        read_theta(tmp_path / "nonexistent.txt")
