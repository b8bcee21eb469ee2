import struct

import numpy as np
import pytest

from tumseg.dataset import (
    RunConfig,
    list_subjects,
    load_probs,
    parse_config,
    preprocess,
    read_subject,
    save_probs,
    write_subject,
)
from tumseg.errors import BadMagic, ConfigError, SpecInvalid, TruncatedFile, UnsupportedDatatype
from tumseg.nifti import nifti_read, nifti_write
from tumseg.phantom import PhantomSpec, generate_phantom
from tumseg.volume import BACKGROUND, ED, ET, NCR

nib = pytest.importorskip("nibabel")


@pytest.mark.parametrize("dtype", [np.float32, np.uint8, np.int16])
@pytest.mark.parametrize("suffix", [".nii", ".nii.gz"])
def test_nifti_round_trip(tmp_path, rng, dtype, suffix):
    data = (rng.random((7, 5, 3)) * 200).astype(dtype)
    path = tmp_path / f"x{suffix}"
    nifti_write(path, data, (1.0, 1.5, 2.0))
    img = nifti_read(path)
    assert img.data.dtype == dtype
    np.testing.assert_array_equal(img.data, data)
    assert img.voxel_size == (1.0, 1.5, 2.0)


def test_nifti_against_nibabel(tmp_path, rng):
    data = rng.standard_normal((6, 4, 5)).astype(np.float32)
    nifti_write(tmp_path / "ours.nii.gz", data, (0.9, 1.0, 1.1))
    ref = nib.load(str(tmp_path / "ours.nii.gz"))
    np.testing.assert_array_equal(np.asarray(ref.dataobj), data)
    np.testing.assert_allclose(ref.header.get_zooms(), (0.9, 1.0, 1.1), rtol=1e-6)

    img = nib.Nifti1Image(data, np.diag([2.0, 1.0, 1.0, 1.0]))
    img.header.set_data_dtype(np.float32)
    nib.save(img, str(tmp_path / "theirs.nii.gz"))
    ours = nifti_read(tmp_path / "theirs.nii.gz")
    np.testing.assert_array_equal(ours.data, data)


def test_nifti_scaling_and_big_endian(tmp_path):
    data = np.arange(24, dtype=np.int16).reshape(2, 3, 4)
    img = nib.Nifti1Image(data, np.eye(4))
    img.header.set_data_dtype(np.int16)
    img.header.set_slope_inter(0.5, 10.0)
    nib.save(img, str(tmp_path / "s.nii"))
    np.testing.assert_allclose(nifti_read(tmp_path / "s.nii").data, data * 0.5 + 10.0)

    # swap a little-endian file to big-endian by hand
    nifti_write(tmp_path / "le.nii", data)
    raw = bytearray((tmp_path / "le.nii").read_bytes())
    dims = struct.unpack_from("<8h", raw, 40)
    struct.pack_into(">8h", raw, 40, *dims)
    dt = struct.unpack_from("<hh", raw, 70)
    struct.pack_into(">hh", raw, 70, *dt)
    pix = struct.unpack_from("<8f", raw, 76)
    struct.pack_into(">8f", raw, 76, *pix)
    struct.pack_into(">f", raw, 108, 352.0)
    struct.pack_into(">2f", raw, 112, 1.0, 0.0)
    raw[352:] = data.astype(">i2").tobytes(order="F")
    (tmp_path / "be.nii").write_bytes(bytes(raw))
    np.testing.assert_array_equal(nifti_read(tmp_path / "be.nii").data, data)


def test_nifti_template_orientation(tmp_path):
    img = nib.Nifti1Image(np.zeros((2, 2, 2), np.float32), np.diag([-1.0, -1.0, 1.0, 1.0]))
    nib.save(img, str(tmp_path / "t.nii"))
    template = nifti_read(tmp_path / "t.nii").header
    nifti_write(tmp_path / "o.nii", np.ones((2, 2, 2), np.float32), template=template)
    np.testing.assert_allclose(nib.load(str(tmp_path / "o.nii")).affine, img.affine)


def test_nifti_errors(tmp_path):
    p = tmp_path / "bad.nii"
    p.write_bytes(b"\0" * 100)
    with pytest.raises(TruncatedFile):
        nifti_read(p)
    nifti_write(p, np.zeros((2, 2, 2), np.uint8))
    raw = bytearray(p.read_bytes())
    raw[344:348] = b"ni1\0"
    p.write_bytes(bytes(raw))
    with pytest.raises(BadMagic):
        nifti_read(p)
    nifti_write(p, np.zeros((4, 4, 4), np.float32))
    p.write_bytes(p.read_bytes()[:400])
    with pytest.raises(TruncatedFile):
        nifti_read(p)
    with pytest.raises(UnsupportedDatatype):
        nifti_write(p, np.zeros((2, 2), np.float64))


def test_probs_round_trip(tmp_path, rng):
    p = rng.random((4, 5, 6, 7)).astype(np.float32)
    save_probs(tmp_path / "p.bin", p)
    np.testing.assert_array_equal(load_probs(tmp_path / "p.bin"), p)
    (tmp_path / "q.bin").write_bytes(b"nope" * 10)
    with pytest.raises(BadMagic):
        load_probs(tmp_path / "q.bin")


def test_subject_round_trip(tmp_path):
    vol, labels = generate_phantom(PhantomSpec(dims=(24, 24, 20), seed=3))
    write_subject(tmp_path, "s1", vol, labels)
    assert list_subjects(tmp_path) == ["s1"]
    v2, l2, crop = read_subject(tmp_path, "s1")
    np.testing.assert_array_equal(v2.data, vol.data)
    np.testing.assert_array_equal(l2, labels)
    assert crop is None
    pre, pl, spec = preprocess(v2, l2, (16, 16, 24))
    write_subject(tmp_path / "pre", "s1", pre, pl, spec)
    _, _, spec2 = read_subject(tmp_path / "pre", "s1")
    assert spec2 == spec


def test_config_parse():
    cfg = parse_config("""
        # comment
        unet.base_width = 8
        train.epochs = 3   # trailing
        augment.translate_range = -5, 5
        unet.initial_kernel = 3
    """)
    assert cfg.unet.base_width == 8 and cfg.train.epochs == 3
    assert cfg.augment.translate_range == (-5, 5)
    assert cfg.network_config("sagittal").initial_kernel == 3
    assert RunConfig().network_config("sagittal").initial_kernel == 5
    assert cfg.network_config("tc").num_classes == 2
    for bad in ("foo.bar = 1", "unet.nope = 1", "train.epochs", "train.val_fraction = 2"):
        with pytest.raises(ConfigError):
            parse_config(bad)


@pytest.mark.parametrize("seed", range(20))
def test_phantom_properties(seed):
    vol, labels = generate_phantom(PhantomSpec(seed=seed))
    assert vol.data.shape == (4, 64, 64, 64) and labels.shape == (64, 64, 64)
    brain = vol.brain_mask()
    assert np.all(labels[~brain] == BACKGROUND)
    for code in (NCR, ED, ET):
        assert np.count_nonzero(labels == code) > 0
    # ET brightest on T1-CE, ED brightest on FLAIR
    assert vol.data[2][labels == ET].mean() > vol.data[2][labels == ED].mean()
    assert vol.data[0][labels == ED].mean() > vol.data[0][labels == NCR].mean()


def test_phantom_deterministic_and_validated():
    a = generate_phantom(PhantomSpec(seed=7))
    b = generate_phantom(PhantomSpec(seed=7))
    np.testing.assert_array_equal(a[0].data, b[0].data)
    with pytest.raises(SpecInvalid):
        generate_phantom(PhantomSpec(ncr_fraction=1.2))
