import json
import subprocess
import sys
from pathlib import Path

import pytest

from dilemma_forge.cli import main, parse_config_text, ConfigError
from dilemma_forge.heuristics import LabelMatrix
from dilemma_forge.ingest import ke_csv_text, rankings_csv_text, write_ke_csv
from dilemma_forge.core import Choice, Dataset, KE_SCHEMA
from dilemma_forge.synthetic import ke_population

from conftest import ke_scenario


def run(tmp_path, command, config="", *flags, name="out"):
    cfg = tmp_path / f"{name}.cfg"
    cfg.write_text(config + f"\nout = {tmp_path / name}\n", encoding="utf-8")
    code = main([command, "--config", str(cfg), *flags])
    return code, tmp_path / name


def error_of(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


@pytest.fixture
def ke_files(tmp_path):
    d, rankings, _ = ke_population(28 * 40, seed=0)
    data, ranks = tmp_path / "ke.csv", tmp_path / "rankings.csv"
    data.write_text(ke_csv_text(d), encoding="utf-8")
    ranks.write_text(rankings_csv_text(rankings), encoding="utf-8")
    return data, ranks


def test_label_factorial(tmp_path):
    code, out = run(tmp_path, "label", "domain = ke\ndata = builtin:ke_factorial")
    assert code == 0
    L = LabelMatrix.from_csv((out / "matrix.csv").read_text())
    assert (L.n_scenarios, L.n_heuristics) == (28, 3)
    age = [line.split(",")[1] for line in (out / "matrix.csv").read_text().splitlines()[1:]]
    assert sum(c != "-" for c in age) == 16
    report = (out / "heuristics.csv").read_text().splitlines()
    for line, m in zip(report[1:], range(3)):
        col = [r.split(",")[m + 1] for r in (out / "matrix.csv").read_text().splitlines()[1:]]
        assert float(line.split(",")[1]) == pytest.approx(1 - col.count("-") / len(col), abs=1e-6)
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["outputs"]) == {"matrix.csv", "heuristics.csv"}
    assert "out" not in manifest["config"]


def test_empty_suite_is_config_error(tmp_path, capsys):
    empty = tmp_path / "empty.rules"
    empty.write_text("# nothing here\n")
    code, _ = run(tmp_path, "label", f"data = builtin:ke_factorial\nsuite = {empty}")
    assert code == 2 and error_of(capsys)["error"] == "config"


def test_unknown_key_and_duplicates(tmp_path, capsys):
    code, _ = run(tmp_path, "label", "colour = red")
    assert code == 2 and error_of(capsys)["exit_code"] == 2
    with pytest.raises(ConfigError):
        parse_config_text("seed = 1\nseed = 2\n")


def test_missing_data_is_data_error(tmp_path, capsys):
    code, _ = run(tmp_path, "label", f"data = {tmp_path / 'nope.csv'}")
    assert code == 3 and error_of(capsys)["error"] == "data"


def test_empty_test_split_is_evaluation_error(tmp_path, capsys, ke_files):
    data, _ = ke_files
    code, _ = run(tmp_path, "train", f"data = {data}\nsplit = 1.0\nn_trees = 3\nmode = supervised")
    assert code == 5 and error_of(capsys)["error"] == "evaluation"


def test_majority_labels_match_hand_vote(tmp_path):
    matrix = tmp_path / "m.csv"
    matrix.write_text("scenario_id,a,b,c\nx,F,F,S\ny,S,-,S\nz,F,S,-\n")
    code, out = run(tmp_path, "aggregate", f"matrix = {matrix}\ntie = abstain")
    assert code == 0
    assert (out / "labels.csv").read_text() == "scenario_id,label\nx,F\ny,S\nz,-\n"


def test_weighted_weights_file(tmp_path):
    code, out = run(tmp_path, "aggregate",
                    "domain = ke\ndata = builtin:ke_factorial\nmodel = weighted\nborda = 3.42,2.71,2.10")
    assert code == 0
    assert (out / "weights.csv").read_text() == (
        "heuristic,weight\nchoose_younger,0.684\nchoose_drinks_less,0.542\n"
        "choose_no_health_issues,0.420\n")


def test_weighted_from_rankings(tmp_path, ke_files):
    data, ranks = ke_files
    code, out = run(tmp_path, "aggregate", f"data = {data}\nmodel = weighted\nrankings = {ranks}")
    assert code == 0
    w = [float(line.split(",")[1]) for line in (out / "weights.csv").read_text().splitlines()[1:]]
    assert w[0] > w[1] > w[2] > 0


def test_generative_zero_epochs_is_half(tmp_path):
    code, out = run(tmp_path, "aggregate",
                    "data = builtin:ke_factorial\nmodel = generative\nepochs = 0")
    assert code == 0
    rows = (out / "labels.csv").read_text().splitlines()
    assert rows[0] == "scenario_id,label,p_first"
    assert {r.split(",")[2] for r in rows[1:]} == {"0.500000"}
    assert json.loads((out / "model.json").read_text())
    assert (out / "weights.csv").read_text().startswith("heuristic,coverage,")


def test_supervised_on_separable_data(tmp_path):
    design = [s for s in (ke_scenario(a, b) for a, b in _age_pairs())]
    rows = []
    for rep in range(6):
        for k, s in enumerate(design):
            younger = Choice.FIRST if s.first.counts["age_old"] == 0 else Choice.SECOND
            rows.append(ke_scenario(tuple(s.first.counts.values()), tuple(s.second.counts.values()),
                                    f"r{rep}:{k}", younger, f"r{rep}"))
    data = tmp_path / "sep.csv"
    write_ke_csv(Dataset(KE_SCHEMA, rows), data)
    code, out = run(tmp_path, "train", f"data = {data}\nmode = supervised\nn_trees = 10")
    assert code == 0
    assert json.loads((out / "metrics.json").read_text())["accuracy"] == 1.0


def _age_pairs():
    import itertools
    profiles = list(itertools.product((0, 1), repeat=3))
    return [(a, b) for a, b in itertools.combinations(profiles, 2) if a[0] != b[0]]


def test_curve_point_matches_train(tmp_path, ke_files):
    data, _ = ke_files
    common = f"data = {data}\nmode = supervised\nn_trees = 10\n"
    code, out = run(tmp_path, "train", common + "cv_folds = 4", name="train")
    assert code == 0
    code, curve = run(tmp_path, "curve", common + "folds = 4\nxs = 0\nmodels = supervised",
                      name="curve")
    assert code == 0
    (row,) = (curve / "curve.csv").read_text().splitlines()[1:]
    fold_mean = json.loads((out / "metrics.json").read_text())["fold_mean"]
    assert float(row.split(",")[2]) == pytest.approx(fold_mean, abs=1e-6)


def test_perturb_all_abstain_row(tmp_path, ke_files):
    data, _ = ke_files
    rules = tmp_path / "s.rules"
    rules.write_text(
        'heuristic "younger" { when argmin(first.age_old, second.age_old) }\n'
        'heuristic "never" { when first.age_old > 5 -> choose first }\n'
        'heuristic "sober" { when argmin(first.drinks_frequently, second.drinks_frequently) }\n')
    code, out = run(tmp_path, "perturb", f"data = {data}\nsuite = {rules}")
    assert code == 0
    lines = (out / "perturbation.csv").read_text().splitlines()
    assert lines[0] == "heuristic,gain,baseline,perturbed,error"
    assert lines[2].startswith("never,0.000000,")


def test_weighted_plateaus_before_supervised(tmp_path, ke_files):
    data, ranks = ke_files
    xs = [1, 2, 4, 8, 16, 32]
    code, out = run(tmp_path, "curve",
                    f"data = {data}\nrankings = {ranks}\nmodel = weighted\naxis = respondents\n"
                    f"xs = {','.join(map(str, xs))}\nmodels = vote_weighted,supervised\n"
                    "folds = 5\nseeds = 0,1,2,3\nn_trees = 20")
    assert code == 0
    means = {}
    for line in (out / "curve.csv").read_text().splitlines()[1:]:
        x, model, mean = line.split(",")[:3]
        means.setdefault(model, []).append(float(mean))

    def plateau(series):
        # first x within two points of the accuracy at the largest x
        return next(x for x, m in zip(xs, series) if m >= series[-1] - 0.02)

    assert plateau(means["vote_weighted"]) < plateau(means["supervised"])


def test_flags_override_config(tmp_path):
    code, out = run(tmp_path, "aggregate", "data = builtin:ke_factorial\nseed = 1",
                    "--seed", "7", "--tie", "abstain")
    assert code == 0
    cfg = json.loads((out / "manifest.json").read_text())["config"]
    assert cfg["seed"] == "7" and cfg["tie"] == "abstain"


@pytest.mark.parametrize("command,extra", [
    ("label", ""), ("aggregate", "model = generative\nepochs = 50"),
    ("train", "n_trees = 10\ncv_folds = 3"), ("perturb", ""), ("report", "model = generative"),
    ("curve", "xs = 50,0\nmodels = supervised,weak_majority,vote_weighted\nmodel = weighted\n"
              "borda = 3.42,2.71,2.10\nfolds = 3\nn_trees = 5"),
])
def test_byte_identical_reruns(tmp_path, ke_files, command, extra):
    data, _ = ke_files
    outs = []
    for name in ("a", "b"):
        code, out = run(tmp_path, command, f"data = {data}\nseed = 3\n{extra}", name=name)
        assert code == 0
        outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert outs[0] == outs[1]


def test_console_script_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "dilemma_forge.cli", "label", "--set", "colour=1"],
                         capture_output=True, text=True)
    assert res.returncode == 2
    assert json.loads(res.stderr)["error"] == "config"
