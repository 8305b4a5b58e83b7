import numpy as np
import pytest

from denserefine.cli import EXIT_CONFIG, EXIT_FORMAT, EXIT_IO, EXIT_NUMERIC, main
from denserefine.densemap import GroundTruthScene, encode_ground_truth
from denserefine.formats import (Record, read_dense_map, read_records, write_dense_map, write_records,
                                 write_tensors)
from denserefine.bench import validate_bench_csv
from denserefine.temporal import TemporalConfig, init_params

SCENE = ["--shape", "120", "160", "--box-size", "20", "40", "--boxes", "3", "--proposals", "10"]


def _metrics(path):
    lines = path.read_text().splitlines()[1:]
    return dict(line.split(",") for line in lines)


def test_encode(tmp_path):
    write_records(tmp_path / "gt.csv", [Record(0, 0, 1.0, 2.0, 5.0, 7.0), Record(1, 0, 0.0, 0.0, 3.0, 3.0)])
    assert main(["encode", "--boxes", str(tmp_path / "gt.csv"), "--shape", "8", "10",
                 "--out", str(tmp_path / "m.dpm")]) == 0
    dmap = read_dense_map(tmp_path / "m.dpm")
    expected = encode_ground_truth(GroundTruthScene((8, 10), np.array([[1.0, 2.0, 5.0, 7.0]])))
    np.testing.assert_array_equal(dmap.P, expected.P)
    np.testing.assert_allclose(dmap.B, expected.B, rtol=1e-7)


def test_refine_noiseless_scene_recovers_truth(tmp_path):
    assert main(["synth-scene", *SCENE, "--noise", "0", "--seed", "3",
                 "--out-map", str(tmp_path / "m.dpm"), "--out-gt", str(tmp_path / "gt.csv")]) == 0
    assert main(["refine", "--map", str(tmp_path / "m.dpm"), "--out", str(tmp_path / "d.csv")]) == 0
    dets = read_records(tmp_path / "d.csv")
    gt = read_records(tmp_path / "gt.csv")
    assert len(dets) == 3 and all(d.score == 10 for d in dets)
    norm = np.array([120, 160, 120, 160.0])
    got = np.array(sorted(tuple(np.array(d.box) / norm) for d in dets))
    want = np.array(sorted(tuple(np.array(g.box) / norm) for g in gt))
    # the map file stores float32 offsets, so compare at float32 resolution
    np.testing.assert_allclose(got, want, atol=1e-6)


def test_nms_and_detect_eval(tmp_path):
    main(["synth-scene", *SCENE, "--out-map", str(tmp_path / "m.dpm"), "--out-gt", str(tmp_path / "gt.csv")])
    assert main(["nms", "--map", str(tmp_path / "m.dpm"), "--out", str(tmp_path / "n.csv")]) == 0
    assert len(read_records(tmp_path / "n.csv")) >= 3
    assert main(["detect-eval", "--dets", str(tmp_path / "n.csv"), "--gt", str(tmp_path / "gt.csv"),
                 "--out", str(tmp_path / "e.csv"), "--curve", str(tmp_path / "pr.csv")]) == 0
    m = _metrics(tmp_path / "e.csv")
    assert 0.0 <= float(m["ap"]) <= 1.0
    assert (tmp_path / "pr.csv").read_text().startswith("score,precision,recall")


def test_detect_eval_hand_ledger(tmp_path):
    gt = [Record(0, 0, 0.0, 0.0, 10.0, 10.0), Record(0, 1, 0.0, 20.0, 10.0, 30.0)]
    dets = [Record(0, 0, 0.0, 0.0, 10.0, 10.0, 0.9), Record(0, 1, 50.0, 50.0, 60.0, 60.0, 0.8),
            Record(0, 2, 0.0, 20.0, 10.0, 30.0, 0.7)]
    write_records(tmp_path / "gt.csv", gt)
    write_records(tmp_path / "d.csv", dets)
    assert main(["detect-eval", "--dets", str(tmp_path / "d.csv"), "--gt", str(tmp_path / "gt.csv"),
                 "--out", str(tmp_path / "e.csv")]) == 0
    m = _metrics(tmp_path / "e.csv")
    assert float(m["ap"]) == pytest.approx(0.8333, abs=5e-5)
    assert (m["n_detections"], m["n_gt"], m["n_tp"]) == ("3", "2", "2")


def test_seed_reproducible(tmp_path):
    for name in ("a", "b"):
        main(["synth-scene", *SCENE, "--seed", "5", "--false-positives", "4",
              "--out-map", str(tmp_path / f"{name}.dpm"), "--out-gt", str(tmp_path / f"{name}.csv")])
    assert (tmp_path / "a.dpm").read_bytes() == (tmp_path / "b.dpm").read_bytes()
    assert (tmp_path / "a.csv").read_text() == (tmp_path / "b.csv").read_text()
    main(["synth-scene", *SCENE, "--seed", "6", "--out-map", str(tmp_path / "c.dpm"),
          "--out-gt", str(tmp_path / "c.csv")])
    assert (tmp_path / "a.dpm").read_bytes() != (tmp_path / "c.dpm").read_bytes()


def test_bench(tmp_path):
    assert main(["bench", *SCENE, "--scenes", "2", "--out", str(tmp_path / "b.csv")]) == 0
    rows = validate_bench_csv((tmp_path / "b.csv").read_text())
    assert len(rows) == 6


@pytest.mark.parametrize("strategy", ["boxes", "embed", "embed_soft"])
def test_synth_seq_track_and_action_eval(tmp_path, strategy):
    seq, emb = tmp_path / "seq.csv", tmp_path / "emb.drt"
    assert main(["synth-seq", "--frames", "5", "--persons", "3", "--jitter", "0", "--seed", "2",
                 "--out", str(seq), "--out-embeddings", str(emb)]) == 0
    out = tmp_path / "tracks.csv"
    assert main(["track", "--detections", str(seq), "--embeddings", str(emb), "--strategy", strategy,
                 "--out", str(out)]) == 0
    truth = read_records(seq)
    tracks = read_records(out)
    # with no jitter every strategy keeps identities consistent: map track id -> person id
    pairs = {(t.id, g.id) for t, g in zip(tracks, truth) if t.box is not None}
    assert len({tid for tid, _ in pairs}) == len(pairs) == 3
    assert main(["action-eval", "--pred", str(out), "--truth", str(seq), "--out", str(tmp_path / "a.csv")]) == 0
    m = _metrics(tmp_path / "a.csv")
    assert float(m["individual_accuracy"]) == 1.0 and float(m["collective_accuracy"]) == 1.0


def test_track_with_checkpoint(tmp_path):
    seq, emb, ckpt = tmp_path / "seq.csv", tmp_path / "emb.drt", tmp_path / "p.drt"
    main(["synth-seq", "--frames", "3", "--persons", "2", "--seed", "1", "--out", str(seq),
          "--out-embeddings", str(emb)])
    params = init_params(32, TemporalConfig(d_e=32, d_h=8), 8, 9, seed=0)
    # the checkpoint consumes 32-dimensional detection embeddings directly
    write_tensors(ckpt, params.named())
    assert main(["track", "--detections", str(seq), "--embeddings", str(emb), "--params", str(ckpt),
                 "--out", str(tmp_path / "t.csv")]) == 0
    recs = read_records(tmp_path / "t.csv")
    assert all(r.label is not None and 0 <= r.label < 9 for r in recs if r.box is not None)


def test_exit_codes(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("mrf.sigmaa = 1\n")
    out = str(tmp_path / "x")
    assert main(["bench", "--config", str(cfg), "--scenes", "1", "--out", out]) == EXIT_CONFIG
    assert main(["refine", "--map", str(tmp_path / "missing.dpm"), "--out", out]) == EXIT_IO
    (tmp_path / "junk.dpm").write_bytes(b"nonsense")
    assert main(["refine", "--map", str(tmp_path / "junk.dpm"), "--out", out]) == EXIT_FORMAT
    assert main(["synth-scene", "--shape", "20", "20", "--out-map", out, "--out-gt", out]) == EXIT_NUMERIC
    assert main(["bench", "--threads", "0", "--scenes", "1", "--out", out]) == EXIT_CONFIG
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2


def test_diagnostic_is_one_line(tmp_path, capsys):
    main(["refine", "--map", str(tmp_path / "missing.dpm"), "--out", str(tmp_path / "x")])
    err = capsys.readouterr().err
    assert err.startswith("denserefine: ") and err.count("\n") == 1


def test_refine_empty_map(tmp_path):
    dmap = encode_ground_truth(GroundTruthScene((4, 4), np.zeros((0, 4))))
    write_dense_map(tmp_path / "e.dpm", dmap)
    assert main(["refine", "--map", str(tmp_path / "e.dpm"), "--out", str(tmp_path / "d.csv")]) == 0
    assert read_records(tmp_path / "d.csv") == []
