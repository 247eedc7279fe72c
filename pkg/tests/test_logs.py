import mlkws.logs as lg
import pytest


def test_incorrect_log_yaml_path():

    dir_name = "random/incorrect/filepath/"

    with pytest.raises(ValueError):
        lg.setup_logging(custom_yaml_path=dir_name)


def test_incorrect_log_level(tmp_path, monkeypatch):

    monkeypatch.setenv("MLOOK_LOG", "verbose")
    with pytest.raises(ValueError):
        lg.setup_logging(log_dir=tmp_path)


def test_general_logging(tmp_path):

    lg.setup_logging(log_dir=tmp_path, level="debug")
    lg.critical_log("A random critical message")
    lg.debug_log("A random debug message")
    lg.warning_log("A random warning message")
    lg.info_log("A random info message")
    for name in ("info", "debug", "critical"):
        assert (tmp_path / f"{name}.log").exists()
