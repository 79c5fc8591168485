import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mpcsbl.datagen import (
    GenSpec,
    add_noise,
    gen_block_sparse_signal,
    gen_instance,
    gen_sensing_matrix,
)
from mpcsbl.instance_io import instance_from_dict, instance_to_dict, load_instance, save_instance


def runs(mask):
    """Maximal runs of True as (start, length)."""
    out, i = [], 0
    while i < len(mask):
        if mask[i]:
            j = i
            while j < len(mask) and mask[j]:
                j += 1
            out.append((i, j - i))
            i = j
        else:
            i += 1
    return out


def test_same_seed_same_instance():
    spec = GenSpec(m=10, n=30, l=2, k=6, snr_db=10.0, seed=123)
    a, b = gen_instance(spec), gen_instance(spec)
    assert np.array_equal(a[0].phi, b[0].phi)
    assert np.array_equal(a[0].y_mat, b[0].y_mat)
    assert a[1:] == b[1:]


def test_different_seeds_differ():
    a = gen_sensing_matrix(GenSpec(m=5, n=5, l=1, k=1, num_blocks=1, seed=1))
    b = gen_sensing_matrix(GenSpec(m=5, n=5, l=1, k=1, num_blocks=1, seed=2))
    assert not np.array_equal(a, b)


def test_normalized_columns():
    phi = gen_sensing_matrix(GenSpec(m=7, n=20, l=1, k=2, num_blocks=1, normalize_columns=True))
    np.testing.assert_allclose(np.linalg.norm(phi, axis=0), 1.0, rtol=1e-12)


def test_gaussian_entries():
    phi = gen_sensing_matrix(GenSpec(m=1000, n=1, l=1, k=1, num_blocks=1, seed=9))
    assert abs(phi.mean()) < 4 / np.sqrt(1000)
    assert abs(phi.var() - 1.0) < 4 * np.sqrt(2 / 1000)


def test_full_occupancy():
    x, support, blocks = gen_block_sparse_signal(
        GenSpec(m=3, n=11, l=2, k=8, num_blocks=4, seed=0))
    # 8 rows in 4 blocks with 3 separating gaps fill all 11 rows
    assert len(support) == 8 and len(blocks) == 4
    assert runs(np.any(x != 0, axis=1)) == blocks


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 60), st.data(), st.integers(0, 2**64 - 1))
def test_block_structure(n, data, seed):
    nb = data.draw(st.integers(1, max(1, (n + 1) // 2)))
    k = data.draw(st.integers(nb, n - nb + 1))
    spec = GenSpec(m=2, n=n, l=3, k=k, num_blocks=nb, seed=seed)
    x, support, blocks = gen_block_sparse_signal(spec)
    rows = np.any(x != 0, axis=1)
    assert rows.sum() == k
    assert sorted(support) == np.flatnonzero(rows).tolist()
    assert runs(rows) == blocks
    assert len(blocks) == nb
    # support is identical across columns
    assert np.all((x != 0) == rows[:, None])


def test_infeasible_layout():
    with pytest.raises(ValueError):
        gen_block_sparse_signal(GenSpec(m=2, n=10, l=1, k=8, num_blocks=4))
    with pytest.raises(ValueError):
        GenSpec(m=2, n=10, l=1, k=3, num_blocks=4)
    with pytest.raises(ValueError):
        GenSpec(m=2, n=10, l=1, k=11)


def test_noise_variance_formula():
    y = np.full((4, 5), 10.0 ** 0.5)  # ||y||^2 / (ML) = 10
    _, sigma2 = add_noise(y, 10.0, seed=0)
    assert sigma2 == pytest.approx(1.0, rel=1e-12)


def test_noiseless_passthrough():
    y = np.arange(6.0).reshape(3, 2)
    out, sigma2 = add_noise(y, "noiseless", seed=0)
    assert sigma2 == 0.0 and np.array_equal(out, y)


def test_zero_signal_rejected():
    with pytest.raises(ValueError):
        add_noise(np.zeros((3, 2)), 10.0, seed=0)


@pytest.mark.parametrize("snr", [5.0, 15.0, 25.0])
def test_realized_snr(snr):
    spec = GenSpec(m=200, n=300, l=10, k=40, snr_db=snr, seed=4)
    inst, *_ = gen_instance(spec)
    clean = inst.phi @ inst.truth
    noise = inst.y_mat - clean
    realized = 10 * np.log10(np.sum(clean ** 2) / np.sum(noise ** 2))
    assert abs(realized - snr) < 1.0


def test_instance_roundtrip(tmp_path):
    inst, *_ = gen_instance(GenSpec(m=4, n=9, l=2, k=3, num_blocks=2, snr_db=12.0, seed=8))
    path = tmp_path / "inst.json"
    save_instance(path, inst, {"seed": 8})
    back = load_instance(path)
    assert np.array_equal(back.phi, inst.phi)
    assert np.array_equal(back.y_mat, inst.y_mat)
    assert np.array_equal(back.truth, inst.truth)


def test_instance_dict_rejects_garbage():
    d = instance_to_dict(gen_instance(GenSpec(m=2, n=3, l=1, k=1, num_blocks=1))[0])
    with pytest.raises(ValueError):
        instance_from_dict({**d, "format": "other/2"})
    with pytest.raises(ValueError):
        instance_from_dict({**d, "phi": d["phi"][:-1]})
