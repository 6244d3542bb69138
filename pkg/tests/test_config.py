import dataclasses

import pytest

from mzlock import ConfigError, default_config, format_config, parse_config


class TestDefaults:
    def test_empty_file_yields_paper_parameters(self):
        cfg = parse_config("")
        assert cfg.optics.lambda_q_nm == 1546.12
        assert cfg.optics.lambda_ph_nm == 1547.72
        assert cfg.d1.dark_prob == 9.33e-6
        assert cfg.d2.dark_prob == 4.14e-5
        assert cfg.d1.efficiency == 0.15
        assert cfg.d1.gate_width_ns == 2.5
        assert cfg.d1.rep_rate_hz == 166000.0
        assert cfg.source.mu == 0.1
        assert cfg.source.launch_dbm == -17.0
        assert cfg.source.isolation_db == 100.0
        assert cfg.stretcher.f_c_hz == 5000.0
        assert cfg.pm.pulse_width_ns == 10.0
        assert cfg.pm.v_max == 6.8
        assert cfg.scenario.scan.dwell_s == 10.0
        assert cfg.bin_duration == 1.0

    def test_comments_and_blank_lines(self):
        cfg = parse_config("# a comment\n\nseed = 7   # trailing comment\n")
        assert cfg.seed == 7


class TestParsing:
    def test_detector_field_set(self):
        cfg = parse_config("detectors.d1.dark_prob = 9.33e-6\n")
        assert cfg.d1.dark_prob == 9.33e-6

    def test_nested_sections(self):
        text = "\n".join([
            "scenario.scan.n_points = 21",
            "scenario.duration_s = 40",
            "scenario.control_off_at = 30",
            "noise.osc_components = 100:0.5:0, 60:0.1:1.5707",
            "scenario.pm_events = 5:3.2, 20:0",
        ])
        cfg = parse_config(text)
        assert cfg.scenario.scan.n_points == 21
        assert cfg.scenario.duration_s == 40
        assert cfg.noise.osc_components == ((100.0, 0.5, 0.0), (60.0, 0.1, 1.5707))
        assert cfg.scenario.pm_events == ((5.0, 3.2), (20.0, 0.0))

    def test_optional_none(self):
        cfg = parse_config("scenario.control_off_at = none\n")
        assert cfg.scenario.control_off_at is None

    def test_unknown_key_rejected_with_line(self):
        with pytest.raises(ConfigError, match="line 2.*unknown key"):
            parse_config("seed = 1\noptics.bogus = 3\n")

    def test_bad_value_rejected_with_line(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config("optics.overlap = not-a-number\n")

    def test_missing_equals_rejected(self):
        with pytest.raises(ConfigError, match="key = value"):
            parse_config("optics.overlap 0.9\n")


class TestValidation:
    def test_invariant_violation_names_key(self):
        with pytest.raises(ConfigError, match="optics.overlap"):
            parse_config("optics.overlap = 1.5\n")

    def test_all_violations_reported(self):
        try:
            parse_config("optics.overlap = 1.5\ndetectors.d1.efficiency = 2.0\n")
        except ConfigError as exc:
            assert any("optics.overlap" in v for v in exc.violations)
            assert any("detectors.d1.efficiency" in v for v in exc.violations)
        else:
            pytest.fail("expected ConfigError")

    @pytest.mark.parametrize("line,needle", [
        ("seed = -1", "seed"),
        ("dt = 0", "dt"),
        ("bin_duration = 0.3", "bin_duration"),  # not a multiple of dt grid
        ("noise.osc_components = 200:0.1:0", "cutoff"),
        ("scenario.scan.v_end = 9.9", "v_max"),
        ("scenario.pm_events = 5:9.9", "voltage"),
        ("detectors.d2.rep_rate_hz = 100000", "gate clock"),
        ("scenario.control_on_at = -1", "control_on_at"),
        ("scenario.scan.dwell_s = 1.5", "whole number"),
        ("detectors.d1.rep_rate_hz = 180000\ndetectors.d2.rep_rate_hz = 180000",
         "sync_delay"),
        ("stretcher.v_lo = 50", "v_lo"),
        ("pm.ringing_amp = 1.0", "ringing_amp"),
    ])
    def test_cross_validation(self, line, needle):
        with pytest.raises(ConfigError, match=needle):
            parse_config(line + "\n")

    def test_event_order_enforced(self):
        with pytest.raises(ConfigError, match="strictly increasing"):
            parse_config("scenario.control_on_at = 5\nscenario.align_extremum_at = 2\n")


class TestRoundTrip:
    def test_defaults_round_trip(self):
        cfg = default_config()
        assert parse_config(format_config(cfg)) == cfg

    def test_modified_config_round_trip(self):
        text = "\n".join([
            "seed = 987654321",
            "dt = 1e-05",
            "noise.osc_components = 100:0.5:0.25, 33:0.07:1",
            "noise.diffusion = 0.75",
            "scenario.control_off_at = none",
            "scenario.pm_events = 7:1.25",
            "scenario.duration_s = 60",
            "controller.latency_steps = 2",
            "optics.t_arm2 = 0.5",
        ])
        cfg = parse_config(text)
        again = parse_config(format_config(cfg))
        assert again == cfg
        assert dataclasses.asdict(again) == dataclasses.asdict(cfg)
