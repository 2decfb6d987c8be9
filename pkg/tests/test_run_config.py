import json
import unittest
from fractions import Fraction
from pathlib import Path

import pytest

from exceptions import ConfigurationError
from run_config import ProblemSpec, load_run_configs, parse_seeds, validate_run_config
from toy_qp import ToyQPSpec, build_toy_qp

CONFIG_DIR = Path(__file__).resolve().parent.parent / "config"

TOY = {"kind": "toy-qp"}


class TestSeeds(unittest.TestCase):

    def test_forms(self):
        self.assertEqual(parse_seeds(3), [3])
        self.assertEqual(parse_seeds("1..4"), [1, 2, 3, 4])
        self.assertEqual(parse_seeds("1,2,5"), [1, 2, 5])
        self.assertEqual(parse_seeds([7, 8]), [7, 8])

    def test_rejected(self):
        for bad in ("5..1", "a,b", True):
            with self.assertRaises(ValueError):
                parse_seeds(bad)

    def test_duplicate_seeds(self):
        with self.assertRaises(ConfigurationError):
            validate_run_config({"problem": TOY, "seeds": [1, 1]})


class TestRunConfig:

    @pytest.mark.parametrize("fields", [
        {"variant": "sadmm", "tau": 0.2, "nu": 0.5},
        {"variant": "sadmm", "K": 2},
        {"variant": "gsadmm-ref", "preset": "tuned-rpca"},
        {"variant": "pjadmm", "eta": 1.0},
        {"tau": 0.2},
        {"tau": 0.2, "nu": 0.5, "preset": "tuned-rpca"},
        {"variant": "rdbcd"},
        {"preset": "fastest"},
        {"K": 0},
        {"rho": 0.0},
        {"nu": 1.0, "tau": 0.1},
        {"colour": "red"},
    ])
    def test_invalid(self, fields):
        with pytest.raises(ConfigurationError):
            validate_run_config({"problem": TOY, **fields})

    def test_problem_params(self):
        spec = ProblemSpec(kind="toy-qp", params={"J": 7})
        assert spec.resolved_params()["J"] == 7
        assert spec.resolved_params()["I"] == 2
        with pytest.raises(ValueError):
            ProblemSpec(kind="rpca", params={"J": 3})
        with pytest.raises(ValueError):
            ProblemSpec(kind="toy-qp", instance="x.json")

    def test_labels(self):
        assert validate_run_config({"problem": TOY, "K": 2}).display_label == "pdmm-K2"
        assert validate_run_config({"problem": TOY, "variant": "rdbcd", "K": 1, "K_I": 1}).display_label \
            == "rdbcd-K1-KI1"
        assert validate_run_config({"problem": TOY, "label": "mine"}).display_label == "mine"

    def test_sampler_follows_preset(self):
        tuned = validate_run_config({"problem": {"kind": "rpca"}, "preset": "tuned-rpca", "K": 2})
        assert tuned.resolved_sampler == "cyclic"
        explicit = validate_run_config({"problem": {"kind": "rpca"}, "preset": "tuned-rpca", "K": 2,
                                        "sampler": "uniform"})
        assert explicit.resolved_sampler == "uniform"
        assert validate_run_config({"problem": TOY}).resolved_sampler == "uniform"

    def test_solver_config(self):
        problem = build_toy_qp(ToyQPSpec(J=4, I=2, seed=0))
        config = validate_run_config({"problem": TOY, "K": "all", "rho": 0.5, "tol": 1e-7})
        solver_config = config.solver_config(problem, seed=3)
        assert solver_config.K == 4
        assert solver_config.seed == 3
        assert solver_config.rho == 0.5
        assert solver_config.step_sizes is None

    def test_manual_step_sizes(self):
        problem = build_toy_qp(ToyQPSpec(J=4, I=2, seed=0))
        config = validate_run_config({"problem": TOY, "K": 2, "tau": 0.25, "nu": 0.5})
        steps = config.solver_config(problem, seed=0).step_sizes
        assert steps.label == "manual"
        assert steps.tau == (Fraction(1, 4),) * 2
        assert steps.nu == (Fraction(1, 2),) * 2
        assert steps.K == 2

    def test_reference_solver_has_no_kernel_config(self):
        problem = build_toy_qp(ToyQPSpec(J=3, I=2, seed=0))
        config = validate_run_config({"problem": TOY, "variant": "gsadmm-ref"})
        with pytest.raises(ConfigurationError):
            config.solver_config(problem, seed=0)


class TestLoading:

    def test_shipped_run_file(self):
        (config,) = load_run_configs(CONFIG_DIR / "toy_qp.yaml")
        assert config.seeds == list(range(1, 11))
        assert config.K == 1
        assert config.track_h

    def test_shipped_sweep(self):
        configs = load_run_configs(CONFIG_DIR / "grouplasso_k_sweep.yaml")
        assert [c.display_label for c in configs] == ["pdmm-K1", "pdmm-K2", "pdmm-K5", "pdmm-Kall",
                                                      "sadmm", "gsadmm"]
        assert all(c.problem.kind == "grouplasso" for c in configs)
        assert all(c.max_iter == 50000 for c in configs)

    def test_overrides(self):
        (config,) = load_run_configs(CONFIG_DIR / "toy_qp.yaml", {"rho": 2.0, "max_iter": None})
        assert config.rho == 2.0
        assert config.max_iter == 20000

    def test_command_line_only(self):
        (config,) = load_run_configs(None, {"problem": {"kind": "toy-qp"}, "K": 2})
        assert config.K == 2

    def test_error_names_the_line(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("problem:\n  kind: toy-qp\nvariant: pdmm\nrho: -1.0\ncolour: red\n")
        with pytest.raises(ConfigurationError) as info:
            load_run_configs(path)
        message = str(info.value)
        assert f"{path}:4: rho" in message
        assert f"{path}:5: colour" in message

    def test_sweep_error_names_the_variant_line(self, tmp_path):
        path = tmp_path / "sweep.yaml"
        path.write_text("base:\n  problem:\n    kind: toy-qp\nvariants:\n"
                        "  - variant: pdmm\n    K: 2\n  - variant: pdmm\n    K: -1\n")
        with pytest.raises(ConfigurationError) as info:
            load_run_configs(path)
        assert f"{path}:8: K" in str(info.value)

    def test_json_file(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"problem": {"kind": "grouplasso", "params": {"L": 3}}, "K": 2}))
        (config,) = load_run_configs(path)
        assert config.problem.resolved_params()["L"] == 3

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_run_configs(tmp_path / "absent.yaml")

    def test_malformed_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("problem: [unclosed\n")
        with pytest.raises(ValueError):
            load_run_configs(path)

    def test_top_level_must_be_mapping(self, tmp_path):
        path = tmp_path / "list.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigurationError):
            load_run_configs(path)


if __name__ == '__main__':
    unittest.main()
