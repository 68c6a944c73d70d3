import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles as O
from genbound.data import (BatchTrajectory, Dataset, batches, gen_gaussian_mixture, gen_teacher_student,
                           inject_label_noise, load_csv_dataset, write_csv_dataset)
from genbound.errors import EmptyDataset, InvalidArgument, ParseError, SchemaError


def test_teacher_student_invariants():
    ds = gen_teacher_student(20, 100, 300, seed=4)
    assert np.allclose(np.linalg.norm(ds.X, axis=1), 1.0, atol=1e-12)
    assert np.all(np.abs(ds.y) <= 1.0)
    assert ds.task == "regression" and ds.n == 300 and ds.d0 == 20


def test_teacher_shared_across_splits_and_deterministic():
    a = gen_teacher_student(5, 30, 50, seed=1, split="train")
    b = gen_teacher_student(5, 30, 50, seed=1, split="train")
    c = gen_teacher_student(5, 30, 50, seed=1, split="test")
    assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)
    assert not np.array_equal(a.X, c.X)


def test_generators_reject_bad_sizes():
    with pytest.raises(InvalidArgument):
        gen_teacher_student(0, 10, 10, seed=0)
    with pytest.raises(InvalidArgument):
        gen_gaussian_mixture(3, 1, 10, seed=0)


def test_gaussian_mixture_shapes():
    ds = gen_gaussian_mixture(8, 4, 200, seed=2)
    assert ds.X.shape == (200, 8) and ds.n_classes == 4
    assert set(np.unique(ds.y)) <= {0, 1, 2, 3}


def test_label_noise_count():
    ds = gen_gaussian_mixture(4, 5, 1000, seed=3)
    noisy = inject_label_noise(ds, 0.2, seed=7)
    assert int(noisy.noisy.sum()) == 200
    assert np.array_equal(noisy.y[~noisy.noisy], ds.y[~noisy.noisy])
    again = inject_label_noise(ds, 0.2, seed=7)
    assert np.array_equal(noisy.y, again.y)


def test_label_noise_rejects_regression_and_bad_eps():
    with pytest.raises(InvalidArgument):
        inject_label_noise(gen_teacher_student(3, 5, 10, seed=0), 0.1, seed=0)
    with pytest.raises(InvalidArgument):
        inject_label_noise(gen_gaussian_mixture(3, 2, 10, seed=0), 1.5, seed=0)


def test_csv_round_trip(tmp_path):
    ds = gen_teacher_student(3, 10, 12, seed=5)
    p = tmp_path / "d.csv"
    write_csv_dataset(p, ds)
    assert p.read_text().splitlines()[0] == "x0,x1,x2,y"
    back = load_csv_dataset(p, "regression", 3, header=True)
    assert np.array_equal(back.X, ds.X) and np.array_equal(back.y, ds.y)


def test_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("1,2,3\n1,2\n")
    with pytest.raises(SchemaError) as info:
        load_csv_dataset(p, "regression", 2)
    assert info.value.line == 2
    p.write_text("1,abc,3\n")
    with pytest.raises(ParseError) as info:
        load_csv_dataset(p, "regression", 2)
    assert info.value.line == 1
    p.write_text("")
    with pytest.raises(EmptyDataset):
        load_csv_dataset(p, "regression", 2)
    p.write_text("a,b,y\n3,4,1\n")
    ds = load_csv_dataset(p, "regression", 2, header=True, normalize=True)
    assert np.allclose(ds.X[0], [0.6, 0.8])


def test_dataset_indexing():
    ds = Dataset(np.eye(3), [0, 1, 2], "classification")
    assert ds.n_classes == 3
    z = ds[1]
    assert np.array_equal(z.x, [0, 1, 0]) and z.y == 1
    assert len(ds.subset([0, 2])) == 2


def test_trajectory_requires_divisible_batches():
    with pytest.raises(InvalidArgument):
        BatchTrajectory(0, 10, 3)


@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**40))
@settings(max_examples=40, deadline=None)
def test_batches_partition_each_epoch(m, b, seed):
    traj = BatchTrajectory(seed, m * b, b, epochs=2)
    for e in (1, 2):
        bs = batches(traj, e)
        assert len(bs) == m and all(len(x) == b for x in bs)
        assert sorted(np.concatenate(bs).tolist()) == list(range(m * b))


def test_batches_deterministic_and_epoch_dependent():
    traj = BatchTrajectory(3, 12, 4, epochs=2)
    assert all(np.array_equal(a, b) for a, b in zip(batches(traj, 1), batches(traj, 1)))
    assert not all(np.array_equal(a, b) for a, b in zip(batches(traj, 1), batches(traj, 2)))
    with pytest.raises(InvalidArgument):
        batches(traj, 3)


def test_batch_marginal_is_uniform_over_subsets():
    # every 2-subset of 6 indices is equally likely under shuffle-and-chunk
    freq = O.chunked_batch_frequencies(6, 2)
    assert len(freq) == 15 and max(freq.values()) - min(freq.values()) < 1e-15
    counts = {}
    for seed in range(3000):
        for b in batches(BatchTrajectory(seed, 6, 2), 1):
            key = tuple(sorted(b.tolist()))
            counts[key] = counts.get(key, 0) + 1
    assert set(counts) == set(freq)
    expected = 3000 * 3 / 15
    assert all(abs(c - expected) < 5 * np.sqrt(expected) for c in counts.values())
