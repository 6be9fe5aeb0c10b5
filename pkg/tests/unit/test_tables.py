import numpy as np
import pandas as pd
import pytest

from src.app.core.errors import InputError
from src.data import field_io
from src.harness.tables import CV_COLUMNS, ResultTable, drop_time_columns


def _cv_row(mse, std=0.0, seconds=1.0):
    return {"Mean-MSE": mse, "Std-MSE": std, "Mean-MAE": mse, "Std-MAE": 0.0, "Mean-Time": seconds, "Std-Time": 0.0}


class TestResultTable:
    def test_rows_and_failures(self):
        table = ResultTable("grid", CV_COLUMNS, index_name="cell")
        table.add_row("a", _cv_row(0.2))
        table.add_failure("b", "diverged")
        assert len(table) == 2 and table.labels == ["a"]
        frame = table.frame()
        assert frame.loc["a", "status"] == "ok"
        assert frame.loc["b", "status"] == "failed: diverged"
        assert np.isnan(frame.loc["b", "Mean-MSE"])

    def test_duplicate_labels_rejected(self):
        table = ResultTable("grid", CV_COLUMNS)
        table.add_row("a", _cv_row(0.2))
        with pytest.raises(InputError):
            table.add_failure("a", "again")

    def test_non_finite_cells_rejected(self):
        with pytest.raises(InputError, match="non-finite"):
            ResultTable("grid", CV_COLUMNS).add_row("a", _cv_row(float("nan")))

    def test_missing_columns_rejected(self):
        with pytest.raises(InputError):
            ResultTable("grid", CV_COLUMNS).add_row("a", {"Mean-MSE": 1.0})

    def test_duplicate_columns_rejected(self):
        with pytest.raises(InputError):
            ResultTable("grid", ["x", "x"])

    def test_best_breaks_ties(self):
        table = ResultTable("grid", CV_COLUMNS)
        table.add_row("slow", _cv_row(0.1, std=0.01, seconds=9.0))
        table.add_row("fast", _cv_row(0.1, std=0.01, seconds=2.0))
        table.add_row("spread", _cv_row(0.1, std=0.05, seconds=1.0))
        table.add_row("worse", _cv_row(0.3))
        assert table.best() == "fast"

    def test_best_of_nothing(self):
        table = ResultTable("grid", CV_COLUMNS)
        table.add_failure("a", "boom")
        assert table.best() is None

    def test_csv_round_trip(self, tmp_path):
        table = ResultTable("grid", CV_COLUMNS, index_name="cell")
        table.add_row("filters=2", _cv_row(1 / 3))
        table.add_failure("filters=4", "Non-finite gradient")
        loaded = ResultTable.from_csv(table.to_csv(tmp_path / "grid.csv"))
        assert loaded.labels == ["filters=2"]
        assert loaded.row("filters=2")["Mean-MSE"] == 1 / 3
        assert loaded.failures == {"filters=4": "Non-finite gradient"}

    def test_drop_time_columns(self):
        df = pd.DataFrame({"mse": [1.0], "seconds": [2.0], "Mean-Time": [3.0], "sDA-Time": [4.0]})
        assert list(drop_time_columns(df).columns) == ["mse"]
        assert list(df.columns) == ["mse", "seconds", "Mean-Time", "sDA-Time"]


class TestFieldFiles:
    def test_csv_keeps_the_grid(self, rng, tmp_path):
        field = rng.random((5, 7))
        loaded = field_io.read_field_csv(field_io.write_field_csv(tmp_path / "f.csv", field[None]))
        np.testing.assert_allclose(loaded, field, rtol=1e-9)

    def test_triptych_layout(self, tmp_path):
        from PIL import Image

        path = field_io.write_triptych(tmp_path / "t.pgm", np.zeros((4, 5)), np.full((4, 5), 0.5), np.ones((4, 5)))
        pixels = np.asarray(Image.open(path))
        assert pixels.shape == (4, 5 * 3 + 2 * 2)
        assert pixels[0, 0] == 0 and pixels[0, 7] == 128 and pixels[0, -1] == 255
        assert (pixels[:, 5:7] == 255).all()

    def test_colour_fields_become_ppm(self, rng, tmp_path):
        path = field_io.write_pgm(tmp_path / "c.pgm", rng.random((3, 4, 4)))
        assert path.suffix == ".ppm" and path.exists()

    def test_panel_shapes_must_agree(self, tmp_path):
        with pytest.raises(InputError):
            field_io.write_triptych(tmp_path / "t.pgm", np.zeros((4, 5)), np.zeros((4, 6)), np.zeros((4, 5)))

    def test_snapshot_export(self, rng, tmp_path):
        assert field_io.export_snapshots(tmp_path, rng.random((7, 1, 3, 3)), every=3) == 3
        assert sorted(p.name for p in tmp_path.glob("*.pgm")) == ["snap_00000.pgm", "snap_00003.pgm", "snap_00006.pgm"]
        assert field_io.export_snapshots(tmp_path / "none", rng.random((7, 1, 3, 3)), every=0) == 0
