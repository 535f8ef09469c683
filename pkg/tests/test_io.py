import numpy as np
import pytest

from spammsqrt import export, qtree
from spammsqrt import sqrt_iter as si
from spammsqrt import precond as pc
from spammsqrt.mmio import (FieldError, IndexRangeError, MalformedHeaderError,
                            MatrixMarketError, read_matrix_market, write_matrix_market)
from spammsqrt.spamm import VolumeLog, multiply

from conftest import decay_spd


def _write(path, text):
    path.write_text(text)
    return path


def test_read_symmetric_2x2(tmp_path):
    p = _write(tmp_path / "a.mtx",
               "%%MatrixMarket matrix coordinate real symmetric\n2 2 3\n1 1 2\n2 1 1\n2 2 2\n")
    np.testing.assert_array_equal(read_matrix_market(p), [[2, 1], [1, 2]])


def test_read_missing_diagonal_is_zero(tmp_path):
    p = _write(tmp_path / "a.mtx",
               "%%MatrixMarket matrix coordinate real symmetric\n2 2 2\n1 1 2\n2 1 1\n")
    np.testing.assert_array_equal(read_matrix_market(p), [[2, 1], [1, 0]])


def test_read_empty(tmp_path):
    p = _write(tmp_path / "e.mtx", "%%MatrixMarket matrix coordinate real general\n3 3 0\n")
    np.testing.assert_array_equal(read_matrix_market(p), np.zeros((3, 3)))


@pytest.mark.parametrize("text,err", [
    ("hello\n2 2 1\n1 1 1\n", MalformedHeaderError),
    ("%%MatrixMarket matrix coordinate complex general\n2 2 1\n1 1 2 0\n", FieldError),
    ("%%MatrixMarket matrix coordinate real symmetric\n2 2 1\n3 1 1\n", IndexRangeError),
    ("%%MatrixMarket matrix array real general\n2 2\n1\n0\n0\n1\n", MalformedHeaderError),
    ("%%MatrixMarket matrix coordinate real general\n2 3 1\n1 1 1\n", MatrixMarketError),
    ("%%MatrixMarket matrix coordinate real general\n2 2 1\n1 2 1\n", MatrixMarketError),
])
def test_read_errors(tmp_path, text, err):
    with pytest.raises(err):
        read_matrix_market(_write(tmp_path / "x.mtx", text))


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_matrix_market(tmp_path / "nope.mtx")


def test_roundtrip_17_digits(tmp_path, rng):
    a = rng.standard_normal((12, 12))
    for m in (a + a.T, a):
        p = tmp_path / "r.mtx"
        write_matrix_market(p, m)
        if not np.array_equal(m, m.T):
            with pytest.raises(MatrixMarketError):
                read_matrix_market(p)
            continue
        np.testing.assert_array_equal(read_matrix_market(p), m)


def _volume_log():
    A = qtree.build(decay_spd(64, 100), 8)
    log = VolumeLog()
    multiply(A, A, 1e-3, log)
    return log


def test_export_volumes_csv(tmp_path):
    log = VolumeLog()
    log.record(np.array([[0, 0, 0]]), 16, performed=True)
    p = tmp_path / "v.csv"
    export.export_volumes(log, p)
    assert p.read_text().splitlines() == ["i_lo,j_lo,k_lo,side,status", "0,0,0,16,performed"]
    with pytest.raises(ValueError):
        export.export_volumes(VolumeLog(), p)
    with pytest.raises(ValueError):
        export.export_volumes(log, p, "ply")


def test_identity_volumes_diagonal(tmp_path):
    I = qtree.identity(64, 8)
    log = VolumeLog()
    multiply(I, I, 0.0, log)
    p = tmp_path / "i.csv"
    export.export_volumes(log, p)
    back = VolumeLog.from_csv(p)
    perf = back.boxes("performed")
    assert len(perf) == 8 and np.all(perf[:, 0] == perf[:, 1]) and np.all(perf[:, 1] == perf[:, 2])


def test_export_volumes_vtk(tmp_path):
    log = _volume_log()
    p = tmp_path / "v.vtk"
    export.export_volumes(log, p, "legacy_vtk_points")
    lines = p.read_text().splitlines()
    assert lines[0].startswith("# vtk DataFile") and lines[3] == "DATASET POLYDATA"
    assert lines[4] == f"POINTS {len(log)} double"
    assert f"POINT_DATA {len(log)}" in lines
    n_perf = len(log.boxes("performed"))
    i = lines.index("SCALARS performed int 1") + 2
    flags = [int(v) for v in lines[i:i + len(log)]]
    assert sum(flags) == n_perf


def test_history_roundtrip(tmp_path):
    res = si.run(qtree.build(decay_spd(64, 100), 16), si.IterationConfig(tau=1e-4))
    man = export.RunManifest.from_history(res.history, {"tau": 1e-4})
    assert man.iterations == res.iterations
    p = tmp_path / "h.csv"
    export.export_history(man, p)
    rows = export.read_history(p)
    assert rows == [tuple(r) for r in man.rows]
    assert abs(rows[-1][1]) < 1e-10


def test_history_header_only(tmp_path):
    p = tmp_path / "h.csv"
    export.export_history(export.RunManifest(), p)
    assert p.read_text().strip() == ",".join(export.HISTORY_COLUMNS)
    assert export.read_history(p) == []


def test_representation_roundtrip(tmp_path):
    S = qtree.build(decay_spd(64, 1e4), 16)
    rep = pc.ladder(S, [0.1, 0.01], tau0=0.1, tau_s=1e-3)
    rep.target = "decay-64"
    export.save_representation(rep, tmp_path / "rep")
    back = export.load_representation(tmp_path / "rep")
    assert back.mus == rep.mus and back.taus == rep.taus and back.target == "decay-64"
    for a, b in zip(rep.slices, back.slices):
        np.testing.assert_array_equal(qtree.to_dense(a.z_factor), qtree.to_dense(b.z_factor))


def test_worker_count(monkeypatch):
    monkeypatch.delenv("SPAMM_THREADS", raising=False)
    assert export.worker_count() == 1
    monkeypatch.setenv("SPAMM_THREADS", "4")
    assert export.worker_count() == 4
    for bad in ("zero", "0"):
        monkeypatch.setenv("SPAMM_THREADS", bad)
        with pytest.raises(ValueError):
            export.worker_count()
