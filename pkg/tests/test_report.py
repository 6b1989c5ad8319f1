import json
import os
import sys
import tempfile
import unittest

HERE = os.path.dirname(os.path.abspath(__file__))
PKG = os.path.join(HERE, "..")

sys.path.insert(0, PKG)

from ditpy.evaluation import ROW_FIELDS, EvalReport, read_report, summarize_report


def make_report():
    report = EvalReport(meta={"env": "fork2d"})
    report.add_row(name="attention/adaln_zero", suite="attention", variant="adaln_zero", steps=10, n_rollouts=4,
                   success=0.75, stderr=0.2165, status="ok")
    report.add_row(name="baseline/regression-mse", suite="baseline", objective="regression", n_rollouts=4,
                   success=0.25, stderr=0.2165, status="ok")
    report.add_curve("run0", [1.0, 0.5, 0.25])
    report.add_curve("run1", [2.0, 1.0])
    return report


class TestEvalReport(unittest.TestCase):
    def test_rows_have_every_field(self):
        report = make_report()
        assert len(report) == 2
        assert all(tuple(row) == ROW_FIELDS for row in report.rows)
        assert report.rows[1]["variant"] is None

    def test_rejects_bad_rows(self):
        report = EvalReport()
        with self.assertRaises(KeyError):
            report.add_row(name="x", accuracy=0.5)
        with self.assertRaises(ValueError):
            report.add_row(name="x", success=1.5)

    def test_nan_becomes_none(self):
        row = EvalReport().add_row(name="x", final_loss=float("nan"))
        assert row["final_loss"] is None

    def test_table(self):
        assert EvalReport().table() == "(empty report)"
        text = make_report().table()
        assert "adaln_zero" in text and "0.750" in text
        assert "-" in text

    def test_frames(self):
        report = make_report()
        frame = report.to_frame()
        assert list(frame.columns) == list(ROW_FIELDS)
        assert frame["success"].tolist() == [0.75, 0.25]
        curves = report.curves_frame()
        assert curves.index.tolist() == [1, 2, 3]
        assert curves["run0"].tolist() == [1.0, 0.5, 0.25]

    def test_write_and_read(self):
        report = make_report()
        with tempfile.TemporaryDirectory() as tmp:
            path = report.write(tmp)
            assert sorted(os.listdir(tmp)) == ["curves.csv", "report.jsonl", "report.txt"]
            with open(path) as f:
                first = json.loads(f.readline())
            assert first == {"meta": {"env": "fork2d"}}

            again = read_report(tmp)
            assert again.meta == report.meta
            assert again.rows == report.rows
            assert again.curves == report.curves
            assert read_report(path).rows == report.rows

            text = summarize_report(tmp)
            assert "2 rows" in text and "env: fork2d" in text

    def test_read_rejects_other_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "x.jsonl")
            with open(path, "w") as f:
                f.write('{"name": "row"}\n')
            with self.assertRaises(ValueError):
                read_report(path)


if __name__ == "__main__":
    unittest.main()
