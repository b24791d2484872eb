import csv
import subprocess
import sys

import pytest

from ballmax import cli

BASE = """
[integrand]
family = {family}
a = 1
p = 2
n = {n}
{extra}

[grid]
r_max_multiple = {mult}
n_r = 128
n_dir = 32

[run]
seed = 3
workers = 1
check_hypotheses = {checks}

{families}
"""

SWEEP = """
[family:translate_ball]
taus = 0.05, 0.1, 0.2

[family:dilate_ball]
taus = 0.1, 0.3

[family:random_rays]
taus = 0.5
seeds = 0, 1
"""


def write(tmp_path, family="linear-cutoff", n=1, extra="", mult=4, checks="true", families=SWEEP, name="exp.ini"):
    path = tmp_path / name
    path.write_text(BASE.format(family=family, n=n, extra=extra, mult=mult, checks=checks, families=families))
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_parse_config(tmp_path):
    cfg = cli.parse_config(write(tmp_path, extra="c = 3"))
    assert cfg.family == "linear-cutoff" and cfg.n == 1 and cfg.params == {"c": 3.0}
    assert cfg.n_r == 128 and cfg.n_dir == 32 and cfg.seed == 3
    assert [s.family for s in cfg.sweeps] == ["translate_ball", "dilate_ball", "random_rays"]
    assert cfg.sweeps[0].taus == (0.05, 0.1, 0.2)
    assert cfg.sweeps[2].seeds == (0, 1)
    # translations are given in units of R and become distances
    specs = cli.competitor_specs(cfg)
    assert len(specs) == 3 + 2 + 2
    assert specs[0].tau == pytest.approx(0.05 * 0.5)
    assert [s.seed for s in specs[-2:]] == [3, 4]


def test_well_formed_config_validates(tmp_path):
    assert cli.validate(cli.parse_config(write(tmp_path))) == []


def test_unsupported_dimension(tmp_path):
    problems = cli.validate(cli.parse_config(write(tmp_path, n=4)))
    assert any("unsupported dimension" in p for p in problems)


def test_truncation_smaller_than_maximizer(tmp_path):
    problems = cli.validate(cli.parse_config(write(tmp_path, mult=0.5)))
    assert any("truncation smaller than maximizer" in p for p in problems)


@pytest.mark.parametrize(
    "families, needle",
    [
        ("[family:spin]\ntaus = 0.1\n", "unknown perturbation family"),
        ("[family:dilate_ball]\ntaus = 1.5\n", "must be < 1"),
        ("[family:translate_ball]\ntaus = 5\n", "R_max - R"),
        ("", "no perturbation families"),
    ],
)
def test_sweep_problems(tmp_path, families, needle):
    problems = cli.validate(cli.parse_config(write(tmp_path, families=families)))
    assert any(needle in p for p in problems)


def test_unparseable_config(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[integrand]\nfamily = exponential\nn = two\n")
    with pytest.raises(cli.ConfigError):
        cli.parse_config(bad)
    bad.write_text("no sections at all\n")
    with pytest.raises(cli.ConfigError):
        cli.parse_config(bad)
    assert cli.main(["run", str(bad)]) == cli.EXIT_CONFIG
    assert cli.main(["validate", str(bad)]) == cli.EXIT_CONFIG


def test_identity_sweep_has_zero_gaps(tmp_path):
    path = write(tmp_path, families="[family:translate_ball]\ntaus = 0\n")
    res = cli.run(cli.parse_config(path), out=tmp_path / "out")
    assert res.status == cli.EXIT_OK
    (row,) = read_csv(tmp_path / "out" / "chain.csv")
    assert float(row["gap_uv"]) == 0.0 and float(row["gap_vw"]) == 0.0 and float(row["delta"]) == 0.0


@pytest.mark.parametrize("n", [1, 2])
def test_translated_sweep_end_to_end(tmp_path, n):
    families = "[family:translate_ball]\ntaus = 0.05, 0.1, 0.15, 0.2, 0.3\n"
    res = cli.run(cli.parse_config(write(tmp_path, n=n, families=families)), out=tmp_path / "out")
    assert res.status == cli.EXIT_OK, res.messages
    rows = read_csv(tmp_path / "out" / "stability.csv")
    assert list(rows[0]) == list(cli.stability.CSV_COLUMNS)
    lhs = [float(r["lhs"]) for r in rows]
    ratio = [float(r["ratio"]) for r in rows]
    assert all(x < y for x, y in zip(lhs, lhs[1:]))
    assert max(ratio) <= 10 * min(ratio)
    summary = (tmp_path / "out" / "summary.txt").read_text()
    assert "calibrated constant" in summary and "status: 0 (PASS)" in summary


def test_condition_failure_exits_3(tmp_path):
    path = write(tmp_path, family="exponential", extra="q = 1")
    res = cli.run(cli.parse_config(path), out=tmp_path / "out")
    assert res.status == cli.EXIT_HYPOTHESIS
    assert any("condition" in m for m in res.messages)
    summary = (tmp_path / "out" / "summary.txt").read_text()
    assert "hypotheses: FAIL" in summary and "status: 3 (FAIL)" in summary
    assert cli.main(["run", str(path), "--out", str(tmp_path / "cli")]) == cli.EXIT_HYPOTHESIS


def test_inequality_violation_exits_4(tmp_path):
    # with checks off and q < p the ball is no longer optimal: halving the height
    # beats the auxiliary set, so the chain breaks
    families = "[family:scale_height]\ntaus = 0.5\n"
    path = write(tmp_path, family="exponential", extra="q = 1", checks="false", families=families)
    res = cli.run(cli.parse_config(path), out=tmp_path / "out")
    assert res.status == cli.EXIT_INEQUALITY
    summary = (tmp_path / "out" / "summary.txt").read_text()
    assert "chain: FAIL" in summary and "status: 4 (FAIL)" in summary


def test_reruns_are_byte_identical(tmp_path):
    cfg = cli.parse_config(write(tmp_path, n=2))
    cli.run(cfg, out=tmp_path / "a")
    cli.run(cfg, out=tmp_path / "b", workers=2)
    for name in ("hypotheses.csv", "chain.csv", "stability.csv", "summary.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_summary_agrees_with_status(tmp_path):
    res = cli.run(cli.parse_config(write(tmp_path)), out=tmp_path / "out")
    summary = (tmp_path / "out" / "summary.txt").read_text().splitlines()
    assert summary[-1] == f"status: {res.status} ({'PASS' if res.status == 0 else 'FAIL'})"
    checks = dict(
        line.split(": ", 1) for line in summary[3:] if line.endswith(("PASS", "FAIL")) and not line.startswith("status")
    )
    assert set(checks) == set(res.checks)
    assert all((checks[k] == "PASS") == v for k, v in res.checks.items())


def test_output_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    cfg = cli.parse_config(write(tmp_path))
    assert cli.output_dir(cfg) == tmp_path / "env"
    assert cli.output_dir(cfg, tmp_path / "flag") == tmp_path / "flag"
    monkeypatch.delenv(cli.OUT_ENV)
    assert str(cli.output_dir(cfg)) == cli.DEFAULT_OUT


def test_console_entry_point(tmp_path):
    path = write(tmp_path, families="[family:dilate_ball]\ntaus = 0.1\n")
    proc = subprocess.run(
        [sys.executable, "-m", "ballmax.cli", "run", str(path), "--out", str(tmp_path / "o"), "--tol-scale", "2"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "o" / "stability.csv").is_file()
    proc = subprocess.run([sys.executable, "-m", "ballmax.cli", "validate", str(path)], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout == ""


def test_tabulated_integrand_from_file(tmp_path):
    table = tmp_path / "F.csv"
    # linear in s between the columns, so F must vanish up to s = a/2 to satisfy
    # F(r, l a) <= l^p F(r, a)
    rows = ["r,0,0.5,1"] + [f"{r:g},0,0,{3 - r:g}" for r in (0, 1, 2, 3)]
    table.write_text("\n".join(rows) + "\n")
    families = "[family:dilate_ball]\ntaus = 0.1, 0.2\n"
    text = BASE.format(family="tabulated", n=1, extra="table = F.csv", mult=4, checks="true", families=families)
    path = tmp_path / "tab.ini"
    path.write_text(text)
    cfg = cli.parse_config(path)
    assert cli.validate(cfg) == []
    res = cli.run(cfg, out=tmp_path / "out")
    assert res.status == cli.EXIT_OK, res.messages
