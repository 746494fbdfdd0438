"""Golden CLI transcripts.

Each case runs in order inside one temporary directory (later cases read
files written by earlier ones).  Exit code, stdout and the SHA-256 of every
output file are compared with ``fixtures/cli/transcripts.json``.  Set
``IOTPHY_REGEN_GOLDEN=1`` to rewrite the fixture after a deliberate change.
"""

import contextlib
import hashlib
import io
import json
import os
from pathlib import Path

import numpy as np
import pytest

from iotphy.cli import main
from iotphy.iq import SampleBuffer, read_iq_file, write_iq_file

FIXTURE = Path(__file__).parent / "fixtures" / "cli" / "transcripts.json"

SF8_500 = '{"sf": 8, "bw_hz": 500000, "osr": 1}'
SF8_125 = '{"sf": 8, "bw_hz": 125000, "osr": 1}'
SF10_125 = '{"sf": 10, "bw_hz": 125000, "osr": 1}'
PDU = '{"adv_address": "112233445566", "adv_data": "0201060303aafe"}'

CASES = [
    ("mod_3byte", ["lora-mod", "--config", SF8_500, "--payload-hex", "010203", "--out", "{d}/f.iq"], ["f.iq", "f.iq.meta.json"]),
    ("mod_empty", ["lora-mod", "--config", SF8_500, "--payload-hex", "", "--out", "{d}/e.iq"], ["e.iq"]),
    ("mod_sf13", ["lora-mod", "--config", '{"sf": 13}', "--payload-hex", "00", "--out", "{d}/x.iq"], []),
    ("mod_bad_hex", ["lora-mod", "--config", SF8_500, "--payload-hex", "zz", "--out", "{d}/x.iq"], []),
    ("demod_pipeline", ["lora-demod", "--config", SF8_500, "--in", "{d}/f.iq", "--n-bytes", "3"], []),
    ("demod_json", ["lora-demod", "--config", SF8_500, "--in", "{d}/f.iq", "--json"], []),
    ("mod_125", ["lora-mod", "--config", SF8_125, "--payload-hex", "cafe", "--out", "{d}/g.iq"], ["g.iq"]),
    ("demod_wrong_sf", ["lora-demod", "--config", SF10_125, "--in", "{d}/g.iq"], []),
    (
        "sweep_lora",
        ["ser-sweep", "--spec", '{"snr_start_db": -12, "snr_stop_db": -8, "snr_step_db": 2, "trials_per_point": 200, "params": {"sf": 7}}', "--out", "{d}/s.csv", "--seed", "5"],
        ["s.csv"],
    ),
    (
        "sweep_lora_threads",
        ["--threads", "3", "ser-sweep", "--spec", '{"snr_start_db": -12, "snr_stop_db": -8, "snr_step_db": 2, "trials_per_point": 200, "params": {"sf": 7}}', "--out", "{d}/s3.csv", "--seed", "5"],
        ["s3.csv"],
    ),
    (
        "sweep_gfsk",
        ["ser-sweep", "--spec", '{"kind": "gfsk", "snr_start_db": 0, "snr_stop_db": 8, "snr_step_db": 4, "trials_per_point": 2000, "seed": 1}', "--out", "{d}/b.csv"],
        ["b.csv"],
    ),
    ("sweep_few_trials", ["ser-sweep", "--spec", '{"snr_start_db": 0, "snr_stop_db": 1, "snr_step_db": 1, "trials_per_point": 50}', "--out", "{d}/n.csv"], []),
    ("ble_37", ["ble-beacon", "--pdu", PDU, "--channel", "37", "--out", "{d}/ble37.iq"], ["ble37.iq"]),
    ("ble_39", ["ble-beacon", "--pdu", PDU, "--channel", "39", "--out", "{d}/ble39.iq"], ["ble39.iq"]),
    ("ble_bad_channel", ["ble-beacon", "--pdu", PDU, "--channel", "12", "--out", "{d}/x.iq"], []),
    (
        "concurrent",
        ["concurrent-demo", "--configs", '{"configs": [{"sf": 8, "bw_hz": 125000, "osr": 2}, {"sf": 8, "bw_hz": 250000}], "n_symbols": 500, "seed": 2}', "--snr-a", "-12", "--snr-b", "-12", "--out", "{d}/c.csv"],
        ["c.csv"],
    ),
    ("ota_ok", ["ota-sim", "--session", '{"compressed_size": 600, "loss_prob": 0.1}', "--out", "{d}/r.json", "--seed", "4"], ["r.json"]),
    ("ota_total_loss", ["ota-sim", "--session", '{"compressed_size": 60, "loss_prob": 1.0}', "--out", "{d}/r1.json"], ["r1.json"]),
    ("ota_unknown_field", ["ota-sim", "--session", '{"losses": 1}', "--out", "{d}/r2.json"], []),
    ("iq_frame", ["iq", "frame", "--in", "{d}/f.iq", "--out", "{d}/f.words", "--full-scale", "1.5"], ["f.words", "f.words.meta.json"]),
    ("iq_deframe", ["iq", "deframe", "--in", "{d}/f.words", "--out", "{d}/f2.iq"], ["f2.iq"]),
    ("no_command", [], []),
]


def run(argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(argv)
    return code, out.getvalue(), err.getvalue()


def transcript(tmp_path):
    rows = {}
    for name, argv, files in CASES:
        argv = [a.replace("{d}", str(tmp_path)) for a in argv]
        code, out, _ = run(argv)
        rows[name] = {
            "exit": code,
            "stdout": out.replace(str(tmp_path), "{d}"),
            "files": {f: hashlib.sha256((tmp_path / f).read_bytes()).hexdigest() for f in files},
        }
    return rows


@pytest.fixture(scope="module")
def actual(tmp_path_factory):
    return transcript(tmp_path_factory.mktemp("cli"))


@pytest.fixture(scope="module")
def golden(actual):
    if os.environ.get("IOTPHY_REGEN_GOLDEN"):
        FIXTURE.parent.mkdir(parents=True, exist_ok=True)
        FIXTURE.write_text(json.dumps(actual, indent=1, sort_keys=True) + "\n")
    return json.loads(FIXTURE.read_text())


@pytest.mark.parametrize("name", [c[0] for c in CASES])
def test_golden(name, actual, golden):
    assert actual[name] == golden[name]


def test_exit_codes(actual):
    assert actual["mod_3byte"]["exit"] == 0
    assert actual["mod_sf13"]["exit"] == 1
    assert actual["mod_bad_hex"]["exit"] == 1
    assert actual["demod_wrong_sf"]["exit"] == 2
    assert actual["sweep_few_trials"]["exit"] == 1
    assert actual["ble_bad_channel"]["exit"] == 1
    assert actual["ota_total_loss"]["exit"] == 3
    assert actual["ota_unknown_field"]["exit"] == 1
    assert actual["no_command"]["exit"] == 1


def test_mod_demod_pipeline(actual):
    assert "samples: 4416" in actual["mod_3byte"]["stdout"]
    assert actual["demod_pipeline"]["stdout"] == "payload_hex: 010203\n"


def test_empty_payload_is_header_only(actual):
    assert "samples: 3648" in actual["mod_empty"]["stdout"]


def test_threads_do_not_change_results(actual):
    assert actual["sweep_lora"]["files"]["s.csv"] == actual["sweep_lora_threads"]["files"]["s3.csv"]


def test_identical_invocations_identical_bytes(tmp_path):
    argv = ["ota-sim", "--session", '{"compressed_size": 300, "loss_prob": 0.2}', "--out", str(tmp_path / "a.json")]
    run(argv)
    first = (tmp_path / "a.json").read_bytes()
    run(argv)
    assert (tmp_path / "a.json").read_bytes() == first


def test_seed_env_default(tmp_path, monkeypatch):
    spec = '{"snr_start_db": -10, "snr_stop_db": -10, "snr_step_db": 1, "trials_per_point": 300, "params": {"sf": 7}}'
    monkeypatch.setenv("IOTPHY_SEED", "11")
    run(["ser-sweep", "--spec", spec, "--out", str(tmp_path / "env.csv")])
    monkeypatch.delenv("IOTPHY_SEED")
    run(["ser-sweep", "--spec", spec, "--out", str(tmp_path / "flag.csv"), "--seed", "11"])
    assert (tmp_path / "env.csv").read_bytes() == (tmp_path / "flag.csv").read_bytes()


def test_deframe_recovers_quantized_samples(tmp_path):
    x = np.exp(2j * np.pi * 0.01 * np.arange(100)) * 0.7
    write_iq_file(tmp_path / "t.iq", SampleBuffer(x, 1000))
    assert run(["iq", "frame", "--in", str(tmp_path / "t.iq"), "--out", str(tmp_path / "t.w")])[0] == 0
    assert run(["iq", "deframe", "--in", str(tmp_path / "t.w"), "--out", str(tmp_path / "t2.iq")])[0] == 0
    back = read_iq_file(tmp_path / "t2.iq")
    assert back.sample_rate_hz == 1000
    assert np.max(np.abs(back.samples - x)) <= 2 / 4095


def test_config_file_path(tmp_path):
    cfg = tmp_path / "lora.json"
    cfg.write_text(SF8_125)
    code, out, _ = run(["lora-mod", "--config", str(cfg), "--payload-hex", "00", "--out", str(tmp_path / "o.iq")])
    assert code == 0 and "airtime_s" in out
