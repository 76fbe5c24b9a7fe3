import pytest

from warpboard.selfcheck import CHECKS, RESULT_COLUMNS, run_selfcheck


def test_all_checks_pass():
    report = run_selfcheck()
    assert list(report.columns) == RESULT_COLUMNS
    assert len(report) == len(CHECKS)
    failed = report.loc[~report["passed"], ["check", "detail"]]
    assert failed.empty, failed.to_string()


def test_registry_covers_round_trip_and_loss_gradients():
    names = {c.name for c in CHECKS}
    assert {"warp_roundtrip", "gradcheck_losses"} <= names


def test_bad_demodulation_epsilon_fails_the_gate():
    report = run_selfcheck(demod_eps=-1.0, names=["demodulation_closed_form", "compositing_oracle"])
    result = dict(zip(report["check"], report["passed"]))
    assert result == {"compositing_oracle": True, "demodulation_closed_form": False}


def test_unknown_check_name_is_rejected():
    with pytest.raises(ValueError, match="no_such_check"):
        run_selfcheck(names=["warp_roundtrip", "no_such_check"])
