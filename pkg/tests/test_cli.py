"""End-to-end command-line tests: exit codes, file formats, determinism."""

import pytest
import yaml

from edgetrainsim import config_io
from edgetrainsim.cli import main
from edgetrainsim.devices import testbed_preset as load_testbed
from edgetrainsim.parallelism import make_dp_plan
from edgetrainsim.workload import default_edge_job, model_preset


def run(*argv):
    return main(list(argv))


class TestPresets:
    def test_lists_builtins(self, capsys):
        assert run("presets") == 0
        out = capsys.readouterr().out
        for name in ("distilbert", "gpt2-s", "opt-350m", "gpt2-l",
                     "homogeneous-nano4", "heterogeneous-mix4"):
            assert name in out


class TestPlan:
    def test_default_plan_is_dp_or_pp(self, tmp_path, capsys):
        out = tmp_path / "plan.yaml"
        code = run("plan", "--testbed", "homogeneous-nano4",
                   "--model", "gpt2-s", "--objective", "energy",
                   "--out", str(out))
        assert code == 0
        data = yaml.safe_load(out.read_text())
        assert data["kind"] in ("dp", "pp")
        assert data["schema_version"] == 1
        assert len(data["participants"]) == 4
        assert data["checkpoint_interval_s"] > 0
        summary = capsys.readouterr().err
        assert "latency" in summary and "energy" in summary

    def test_single_device_oom_exits_2(self, capsys):
        code = run("plan", "--model", "gpt2-l", "--devices", "nano")
        assert code == 2
        assert "infeasible" in capsys.readouterr().err

    def test_unknown_testbed_exits_1(self, capsys):
        assert run("plan", "--testbed", "bogus") == 1

    def test_unknown_model_exits_1(self):
        assert run("plan", "--model", "bogus") == 1

    def test_missing_domain_file_exits_1(self):
        assert run("plan", "--domain", "/nonexistent/file.yaml") == 1

    def test_usage_error_exits_1(self):
        with pytest.raises(SystemExit) as excinfo:
            run("plan", "--objective", "speed")
        assert excinfo.value.code == 1

    def test_plan_output_is_byte_stable(self, tmp_path):
        a, b = tmp_path / "a.yaml", tmp_path / "b.yaml"
        for out in (a, b):
            assert run("plan", "--testbed", "heterogeneous-mix4",
                       "--model", "distilbert", "--out", str(out)) == 0
        assert a.read_bytes() == b.read_bytes()


class TestSimulate:
    def plan_file(self, tmp_path, **kwargs):
        out = tmp_path / "plan.yaml"
        args = ["plan", "--testbed", "homogeneous-nano4", "--model", "gpt2-s",
                "--out", str(out)]
        assert run(*args) == 0
        return out

    def test_round_trip(self, tmp_path):
        plan = self.plan_file(tmp_path)
        out = tmp_path / "result.yaml"
        assert run("simulate", "--plan", str(plan), "--out", str(out)) == 0
        result = yaml.safe_load(out.read_text())
        assert result["plan_kind"] in ("dp", "pp")
        assert result["latency_per_sample_s"] > 0
        assert not result["oom"]
        # accounting closes per device in the serialized report
        for usage in result["per_device"].values():
            total = (usage["compute_time_s"] + usage["comm_time_s"]
                     + usage["idle_time_s"])
            assert abs(total - result["makespan_s"]) <= 1e-9

    def test_trace_is_time_ordered(self, tmp_path):
        plan = self.plan_file(tmp_path)
        trace = tmp_path / "trace.tsv"
        out = tmp_path / "result.yaml"
        assert run("simulate", "--plan", str(plan), "--iterations", "1",
                   "--trace", str(trace), "--out", str(out)) == 0
        lines = trace.read_text().splitlines()
        assert lines[0] == "time\tdevice\tkind\tduration\tbytes"
        times = [float(line.split("\t")[0]) for line in lines[1:]]
        assert times and times == sorted(times)

    def test_unknown_participant_exits_1(self, tmp_path):
        plan = self.plan_file(tmp_path)
        data = yaml.safe_load(plan.read_text())
        data["participants"][0] = "ghost"
        plan.write_text(yaml.safe_dump(data))
        assert run("simulate", "--plan", str(plan)) == 1

    def test_missing_plan_file_exits_1(self):
        assert run("simulate", "--plan", "/nonexistent/plan.yaml") == 1

    def test_oom_plan_exits_2(self, tmp_path, capsys):
        domain = load_testbed("homogeneous-nano4")
        plan = make_dp_plan(domain, model_preset("gpt2-l"), default_edge_job(),
                            domain.device_ids)
        path = tmp_path / "oom.yaml"
        path.write_text(config_io.dump_yaml(config_io.plan_to_dict(plan,
                                                                   domain)))
        out = tmp_path / "result.yaml"
        assert run("simulate", "--plan", str(path), "--out", str(out)) == 2
        result = yaml.safe_load(out.read_text())
        assert result["oom"] and result["oom_devices"]


class TestSweep:
    def test_full_grid_shape(self, tmp_path):
        out = tmp_path / "sweep.tsv"
        assert run("sweep", "--testbed", "homogeneous-nano4",
                   "--out", str(out)) == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 1 + 4 * 5 * 2  # header + models x kinds x modes
        header = lines[0].split("\t")
        assert header[:4] == ["model", "kind", "mode", "testbed"]
        rows = [dict(zip(header, line.split("\t"))) for line in lines[1:]]
        # GPT2-L: single/dp/sp are OOM with empty metric cells; tp/pp run
        for row in rows:
            if row["model"] == "gpt2-l" and row["kind"] in ("single", "dp",
                                                            "sp"):
                assert row["oom"] == "true"
                assert row["latency_per_sample_s"] == ""
                assert row["energy_per_sample_j"] == ""
            elif row["model"] == "gpt2-l":
                assert row["oom"] == "false"
                assert float(row["latency_per_sample_s"]) > 0

    def test_row_order_is_stable_and_bytes_identical(self, tmp_path):
        a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
        for out in (a, b):
            assert run("sweep", "--testbed", "heterogeneous-mix4",
                       "--models", "distilbert,gpt2-s", "--out", str(out)) == 0
        assert a.read_bytes() == b.read_bytes()
        lines = a.read_text().splitlines()
        assert len(lines) == 1 + 2 * 5 * 2

    def test_mode_filter(self, tmp_path):
        out = tmp_path / "sweep.tsv"
        assert run("sweep", "--models", "distilbert", "--mode", "gpu",
                   "--out", str(out)) == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 1 + 5
        assert all(line.split("\t")[2] == "gpu" for line in lines[1:])

    def test_unknown_model_exits_1(self):
        assert run("sweep", "--models", "bogus") == 1


class TestFaults:
    def plan_file(self, tmp_path):
        out = tmp_path / "plan.yaml"
        assert run("plan", "--testbed", "homogeneous-nano4",
                   "--model", "distilbert", "--out", str(out)) == 0
        return out

    def test_huge_mtbf_matches_fault_free(self, tmp_path):
        plan = self.plan_file(tmp_path)
        out = tmp_path / "report.yaml"
        assert run("faults", "--plan", str(plan), "--mtbf", "1e12",
                   "--out", str(out)) == 0
        report = yaml.safe_load(out.read_text())
        assert report["failures"] == 0
        assert report["goodput_samples_per_s"] == pytest.approx(
            report["fault_free_throughput_samples_per_s"], rel=1e-9)

    def test_same_seed_is_byte_identical(self, tmp_path):
        plan = self.plan_file(tmp_path)
        a, b = tmp_path / "a.yaml", tmp_path / "b.yaml"
        for out in (a, b):
            assert run("faults", "--plan", str(plan), "--mtbf", "40",
                       "--seed", "7", "--out", str(out)) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_halving_mtbf_never_helps_on_average(self, tmp_path):
        plan = self.plan_file(tmp_path)
        means = {}
        for mtbf in ("80", "40"):
            total = 0.0
            for seed in range(30):
                out = tmp_path / f"r{mtbf}-{seed}.yaml"
                assert run("faults", "--plan", str(plan), "--mtbf", mtbf,
                           "--seed", str(seed), "--iterations", "5",
                           "--out", str(out)) == 0
                total += yaml.safe_load(out.read_text())[
                    "goodput_samples_per_s"]
            means[mtbf] = total / 30
        assert means["40"] <= means["80"]

    def test_invalid_mtbf_exits_1(self, tmp_path):
        plan = self.plan_file(tmp_path)
        assert run("faults", "--plan", str(plan), "--mtbf", "-5") == 1
