import json

import pytest

from securenoma.config import ConfigError, Scenario, load_scenario, parse_schemes, scenario_from_dict
from securenoma.model import NetworkTopology
from securenoma.sca import Scheme


def test_defaults_match_simulation_settings():
    s = load_scenario(None)
    assert s.topology == NetworkTopology.table2()
    assert s.noise_w["pu"] == pytest.approx(1e-15)
    r = s.requirements()
    assert r.upsilon[0][0] == pytest.approx(10e-3)
    assert (r.zeta_A1, r.zeta_A2) == pytest.approx((15e-3, 5e-3))
    assert r.gamma_P == ((2.0,), (2.0,)) and r.gamma_S == (1.0, 1.0, 1.0)


def test_toml_and_json_agree(tmp_path):
    toml = tmp_path / "a.toml"
    toml.write_text('[topology]\nKs = 4\ncbs_antennas = 6\n\n[qos]\ngamma_P = 1.5\nupsilon_mw = 8.0\n'
                    '\n[solver]\nmax_iterations = 30\n')
    js = tmp_path / "a.json"
    js.write_text(json.dumps({"topology": {"Ks": 4, "cbs_antennas": 6},
                              "qos": {"gamma_P": 1.5, "upsilon_mw": 8.0},
                              "solver": {"max_iterations": 30}}))
    a, b = load_scenario(toml), load_scenario(js)
    assert a == b
    assert a.topology.Ks == 4 and a.topology.cbs_antennas == 6
    assert a.settings.max_iterations == 30
    assert a.requirements().upsilon[1][0] == pytest.approx(8e-3)


def test_per_user_rate_lists():
    s = scenario_from_dict({"qos": {"gamma_S": [0.5, 1.0, 1.5]}})
    assert s.requirements().gamma_S == (0.5, 1.0, 1.5)


@pytest.mark.parametrize("data", [
    {"bogus": {}},
    {"topology": {"antennas": 3}},
    {"qos": {"gamma": 1.0}},
    {"solver": {"tolerance": -1.0}},
    {"variances": {"h_P": 0.0}},
    {"eh": {"p_max_mw": 10.0}},            # 15 mW target above saturation
    {"qos": {"gamma_S": [1.0, 1.0]}},      # wrong length for three SUs
])
def test_bad_config_raises(data):
    with pytest.raises(ConfigError):
        scenario_from_dict(data)


def test_unparsable_file(tmp_path):
    p = tmp_path / "x.toml"
    p.write_text("[topology\n")
    with pytest.raises(ConfigError):
        load_scenario(p)
    with pytest.raises(ConfigError):
        load_scenario(tmp_path / "missing.toml")


def test_parse_schemes():
    assert parse_schemes("noma-jamming, oma-tdma") == [Scheme.NOMA_JAMMING, Scheme.OMA_TDMA]
    assert parse_schemes(["noma-nojam"]) == [Scheme.NOMA_NOJAM]
    with pytest.raises(ConfigError):
        parse_schemes("noma,oma")


def test_to_dict_roundtrip():
    s = scenario_from_dict({"topology": {"Ks": 3}, "qos": {"gamma_P": 2.5}})
    d = s.to_dict()
    again = scenario_from_dict({k: v for k, v in d.items()})
    assert again == s
    assert Scenario().with_Ks(1).topology.Ks == 1
