import json
import math

import pytest

from cellfree.config import UMA, UMI, ConfigError, SystemConfig, dbm_to_watt, desk_config


def test_noise_power_20mhz():
    cfg = SystemConfig()
    expected = -174 + 10 * math.log10(20e6) + 9
    assert cfg.noise_dBm == pytest.approx(expected, abs=1e-12)
    assert cfg.noise_dBm == pytest.approx(-91.99, abs=0.005)
    assert cfg.noise_power == pytest.approx(10 ** ((expected - 30) / 10), rel=1e-12)


def test_noise_power_one_hertz():
    cfg = SystemConfig(B=1.0, N_F=0.0, N0=-174.0)
    assert cfg.noise_dBm == pytest.approx(-174.0, abs=1e-12)


def test_doubling_bandwidth_adds_3db():
    a = SystemConfig(B=10e6)
    b = SystemConfig(B=20e6)
    assert b.noise_dBm - a.noise_dBm == pytest.approx(10 * math.log10(2), abs=1e-12)


def test_scenario_power_override():
    assert SystemConfig().P_max == pytest.approx(dbm_to_watt(44.0))
    assert SystemConfig(scenario=UMA).P_max == pytest.approx(dbm_to_watt(49.0))


def test_rho_thresholds():
    umi = -32.4 - 20 * math.log10(6) - 31.9 * math.log10(200)
    uma = -32.4 - 20 * math.log10(6) - 30 * math.log10(450)
    assert SystemConfig(scenario=UMI).rho_dB == pytest.approx(umi, abs=1e-9)
    assert SystemConfig(scenario=UMA).rho_dB == pytest.approx(uma, abs=1e-9)


@pytest.mark.parametrize("field,value", [("M", 0), ("K", 0), ("N", 0), ("tau_c", 0), ("N_T", 0), ("B", -1.0)])
def test_invalid_config(field, value):
    with pytest.raises(ConfigError):
        SystemConfig(**{field: value})


def test_json_round_trip(tmp_path):
    cfg = desk_config(tau_c=50, scenario=UMA)
    path = tmp_path / "c.json"
    cfg.save(path)
    assert SystemConfig.load(path) == cfg
    data = json.loads(path.read_text())
    assert data["tau_c"] == 50 and data["P_max_dBm"] == 44.0


def test_unknown_field_rejected():
    with pytest.raises(ConfigError):
        SystemConfig.from_dict({"M": 2, "bogus": 1})


def test_desk_defaults():
    cfg = desk_config()
    assert (cfg.M, cfg.N, cfg.K, cfg.tau_c, cfg.N_T) == (3, 2, 6, 100, 5)
