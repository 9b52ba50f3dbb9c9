import itertools
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lqcd_dd.lattice import (GAMMA, GAMMA5, GaugeHeaderError, GaugeTruncatedError, LatticeGeometry,
                             Rng, checksum, generate_gauge, random_su3, read_gauge, su3_deviation,
                             write_gauge)
from lqcd_dd.lattice.io import GaugeDimensionError, GaugeFileError

# first run of the audited generator, frozen
GOLDEN_RANDOM_SEED7 = "c9c797d12e2396a9b206c575e528fa544a18dbd0d06279be685e984f9560142a"
GOLDEN_FREE = "f028f4fae2df77b24996b42cf158ce0770c66b21834ae3c19f764dfb86da4ce0"


# -- geometry --------------------------------------------------------------

@pytest.mark.parametrize("coords,dims,expected", [
    ((0, 0, 0, 0), (4, 4, 4, 4), 0),
    ((3, 3, 3, 3), (4, 4, 4, 4), 255),
    ((1, 2, 0, 3), (4, 4, 4, 8), 1 + 2 * 4 + 0 * 16 + 3 * 64),
])
def test_site_index_examples(coords, dims, expected):
    assert LatticeGeometry(dims).site_index(coords) == expected


@pytest.mark.parametrize("coords,axis", [((4, 0, 0, 0), "x"), ((0, 0, -1, 0), "z"), ((0, 0, 0, 8), "t")])
def test_site_index_out_of_range_names_axis(coords, axis):
    with pytest.raises(IndexError, match=f"along {axis}"):
        LatticeGeometry((4, 4, 4, 8)).site_index(coords)


@pytest.mark.parametrize("dims", [(2, 2, 2, 2), (4, 4, 4, 8), (8, 8, 8, 8), (3, 5, 2, 7)])
def test_index_bijection_exhaustive(dims):
    geo = LatticeGeometry(dims)
    seen = np.zeros(geo.volume, dtype=bool)
    for c in itertools.product(*(range(d) for d in dims)):
        i = geo.site_index(c)
        assert geo.site_coords(i) == c
        seen[i] = True
    assert seen.all()
    # vectorized views agree with the scalar map
    assert np.array_equal(geo.index_of(geo.coords), np.arange(geo.volume))


def test_geometry_rejects_bad_extent():
    with pytest.raises(ValueError):
        LatticeGeometry((4, 4, 1, 4))
    with pytest.raises(ValueError):
        LatticeGeometry((4, 4, 4, 4), boundary=(1, 1, 1, 0))


def test_neighbors_wrap_and_phase():
    geo = LatticeGeometry((4, 4, 4, 4), boundary=(1, 1, 1, -1))
    fwd, bwd, fph, bph = geo.neighbors
    last_t = geo.site_index((1, 2, 3, 3))
    assert fwd[last_t, 3] == geo.site_index((1, 2, 3, 0))
    assert fph[last_t, 3] == -1.0 and fph[last_t, 0] == 1.0
    first_t = geo.site_index((1, 2, 3, 0))
    assert bwd[first_t, 3] == last_t and bph[first_t, 3] == -1.0
    assert np.array_equal(fwd[bwd[:, 2], 2], np.arange(geo.volume))


# -- gamma algebra ---------------------------------------------------------

def test_gamma_clifford_exact():
    eye = np.eye(4)
    for mu, nu in itertools.combinations_with_replacement(range(4), 2):
        anti = GAMMA[mu] @ GAMMA[nu] + GAMMA[nu] @ GAMMA[mu]
        assert np.array_equal(anti, 2 * eye * (mu == nu))
    for g in GAMMA:
        assert np.array_equal(g.conj().T, g)


def test_gamma5_identities():
    assert np.array_equal(GAMMA5, np.diag([1, 1, -1, -1]).astype(complex))
    assert np.array_equal(GAMMA5 @ GAMMA5, np.eye(4))
    for g in GAMMA:
        assert np.array_equal(GAMMA5 @ g + g @ GAMMA5, np.zeros((4, 4)))
    entries = set(np.unique(GAMMA.ravel()))
    assert entries <= {0, 1, -1, 1j, -1j}


# -- RNG and SU(3) ---------------------------------------------------------

def test_splitmix64_reference_stream():
    # first outputs of SplitMix64 seeded with 0, from the published reference implementation
    assert Rng(0).next_u64(3).tolist() == [
        0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]


def test_random_su3_determinism():
    a = random_su3(Rng(42))
    b = random_su3(Rng(42))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, random_su3(Rng(43)))


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=2**64 - 1))
def test_random_su3_invariants(seed):
    u = random_su3(Rng(seed), 8)
    unit = np.abs(np.swapaxes(u.conj(), -1, -2) @ u - np.eye(3)).max()
    det = np.abs(np.linalg.det(u) - 1).max()
    assert unit < 1e-12
    assert det < 1e-12


def test_generate_free_and_weak_zero():
    geo = LatticeGeometry((4, 4, 2, 2))
    free = generate_gauge("free", geo)
    assert np.array_equal(free.links, np.broadcast_to(np.eye(3), free.links.shape))
    weak0 = generate_gauge("weak", geo, Rng(3), eps=0.0)
    assert np.array_equal(weak0.links, free.links)
    assert free.plaquette() == 1.0


def test_generate_weak_is_su3_and_near_identity():
    geo = LatticeGeometry((4, 4, 4, 4))
    g = generate_gauge("weak", geo, Rng(5), eps=0.1)
    unit, det = g.check()
    assert unit < 1e-12 and det < 1e-12
    assert np.abs(g.links - np.eye(3)).max() < 1.0
    assert 0.9 < g.plaquette() < 1.0


def test_generate_errors():
    geo = LatticeGeometry((2, 2, 2, 2))
    with pytest.raises(ValueError):
        generate_gauge("weak", geo, Rng(1), eps=-0.1)
    with pytest.raises(ValueError):
        generate_gauge("hot", geo, Rng(1))


def test_golden_checksums():
    geo = LatticeGeometry((4, 4, 4, 4))
    assert checksum(generate_gauge("random", geo, Rng(7))) == GOLDEN_RANDOM_SEED7
    assert checksum(generate_gauge("free", geo)) == GOLDEN_FREE


def test_single_precision_links_stay_su3():
    g = generate_gauge("random", LatticeGeometry((2, 2, 2, 2)), Rng(9), precision="single")
    unit, det = su3_deviation(g.links.reshape(-1, 3, 3))
    assert unit < 1e-6 and det < 1e-6


# -- gauge I/O -------------------------------------------------------------

@pytest.mark.parametrize("precision", ["double", "single", "half"])
def test_io_roundtrip_bitwise(tmp_path, precision):
    g = generate_gauge("random", LatticeGeometry((4, 4, 4, 4)), Rng(11), precision=precision)
    path = write_gauge(g, tmp_path / "cfg.qpl")
    back = read_gauge(path)
    assert back.precision == precision
    assert back.geometry.dims == g.geometry.dims
    assert np.array_equal(back.links.view(np.uint8), g.links.view(np.uint8))


def test_io_file_size_and_header_bytes(tmp_path):
    g = generate_gauge("random", LatticeGeometry((4, 4, 4, 4)), Rng(7))
    path = write_gauge(g, tmp_path / "cfg.qpl")
    raw = path.read_bytes()
    assert len(raw) == 32 + 256 * 4 * 18 * 8
    assert raw[:4] == b"QPL2"
    version, pcode = struct.unpack_from("<HH", raw, 4)
    dims = struct.unpack_from("<4I", raw, 8)
    (nbytes,) = struct.unpack_from("<Q", raw, 24)
    assert (version, pcode, dims, nbytes) == (1, 0, (4, 4, 4, 4), 256 * 4 * 18 * 8)
    # link (site 5, direction z), entry (1, 2): independent offset arithmetic
    off = 32 + ((5 * 4 + 2) * 9 + 1 * 3 + 2) * 16
    re, im = struct.unpack_from("<dd", raw, off)
    assert complex(re, im) == g.links[5, 2, 1, 2]


def test_io_bad_magic(tmp_path):
    g = generate_gauge("free", LatticeGeometry((2, 2, 2, 2)))
    path = write_gauge(g, tmp_path / "cfg.qpl")
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(GaugeHeaderError):
        read_gauge(path)


def test_io_bad_version(tmp_path):
    g = generate_gauge("free", LatticeGeometry((2, 2, 2, 2)))
    path = write_gauge(g, tmp_path / "cfg.qpl")
    raw = bytearray(path.read_bytes())
    struct.pack_into("<H", raw, 4, 9)
    path.write_bytes(bytes(raw))
    with pytest.raises(GaugeHeaderError):
        read_gauge(path)


def test_io_truncated(tmp_path):
    g = generate_gauge("free", LatticeGeometry((2, 2, 2, 2)))
    path = write_gauge(g, tmp_path / "cfg.qpl")
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(GaugeTruncatedError):
        read_gauge(path)
    path.write_bytes(b"QPL2")
    with pytest.raises(GaugeTruncatedError):
        read_gauge(path)


def test_io_dimension_overflow(tmp_path):
    g = generate_gauge("free", LatticeGeometry((2, 2, 2, 2)))
    path = write_gauge(g, tmp_path / "cfg.qpl")
    raw = bytearray(path.read_bytes())
    struct.pack_into("<4I", raw, 8, 2**20, 2**20, 2**20, 2)
    path.write_bytes(bytes(raw))
    with pytest.raises(GaugeDimensionError):
        read_gauge(path)


def test_io_error_codes_distinct():
    codes = {GaugeHeaderError.code, GaugeTruncatedError.code, GaugeDimensionError.code}
    assert len(codes) == 3
    assert all(issubclass(e, GaugeFileError)
               for e in (GaugeHeaderError, GaugeTruncatedError, GaugeDimensionError))
