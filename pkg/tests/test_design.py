import io
import itertools
from fractions import Fraction

import numpy as np
import pytest

from bdcsim import (
    AssignmentMatrix,
    DesignFormatError,
    DesignValidationError,
    StorageDesign,
    SystemParameters,
    binomial,
    enumerate_batch_labels,
    heuristic_assign,
    load_design,
    parse_storage_fraction,
    random_assign,
    rows_of,
    save_design,
    validate_assignment,
)

from conftest import DATA, all_shapes, block_design, make_params


class TestBatchLabels:
    def test_walkthrough_order(self):
        labels = enumerate_batch_labels(6, 2)
        assert len(labels) == 15
        assert labels[0] == (1, 2)
        assert labels[:5] == [(1, 2), (1, 3), (1, 4), (1, 5), (1, 6)]
        assert labels[5] == (2, 3)
        assert labels[-1] == (5, 6)

    def test_full_subset(self):
        assert enumerate_batch_labels(4, 4) == [(1, 2, 3, 4)]

    def test_singletons(self):
        assert enumerate_batch_labels(4, 1) == [(1,), (2,), (3,), (4,)]

    def test_count_and_ordering(self):
        for K in range(2, 11):
            for size in range(1, K + 1):
                labels = enumerate_batch_labels(K, size)
                assert len(labels) == binomial(K, size)
                assert labels == sorted(labels)
                assert len(set(labels)) == len(labels)
                assert all(len(l) == size and list(l) == sorted(l) for l in labels)

    def test_bad_size(self):
        with pytest.raises(ValueError):
            enumerate_batch_labels(4, 0)
        with pytest.raises(ValueError):
            enumerate_batch_labels(4, 5)


class TestValidateAssignment:
    def test_walkthrough_matrix_valid(self, example1_design):
        assert validate_assignment(example1_design.assignment) == []

    def test_all_zero_reports_everything(self, example1_params):
        matrix = AssignmentMatrix.zeros(example1_params)
        problems = validate_assignment(matrix)
        rows = [v for v in problems if v.kind == "row"]
        cols = [v for v in problems if v.kind == "column"]
        assert len(rows) == example1_params.num_batches
        assert len(cols) == example1_params.num_partitions
        assert rows[0].actual == 0 and rows[0].expected == example1_params.batch_size

    def test_solver_outputs_valid(self):
        for K, q, muq in [(4, 2, 1), (5, 3, 2), (6, 4, 2), (7, 3, 2)]:
            p = make_params(K, q, muq)
            assert heuristic_assign(p).is_valid
            assert random_assign(p, seed=K).is_valid

    def test_total_rows(self, example1_design):
        assert int(example1_design.assignment.entries.sum()) == example1_design.params.coded_rows

    def test_server_storage_budget(self):
        # each server stores exactly mu*m rows, over many shapes
        for K, q, muq in all_shapes(10):
            p = make_params(K, q, muq)
            design = StorageDesign.from_assignment(heuristic_assign(p))
            per_batch = design.assignment.row_sums()
            for server in range(1, K + 1):
                stored = sum(
                    int(per_batch[i]) for i, label in enumerate(design.labels) if server in label
                )
                assert stored == p.storage_rows, (K, q, muq, server)


class TestRowsOf:
    def test_walkthrough_sequence(self, example1_design):
        assert rows_of(example1_design, 1) == [(1, range(1, 3))]
        assert rows_of(example1_design, 2) == [(1, range(3, 5))]
        assert rows_of(example1_design, 3) == [(1, range(5, 7))]
        assert rows_of(example1_design, 4) == [(2, range(1, 3))]

    def test_partition_cover(self, example1_design):
        p = example1_design.params
        for t in range(1, p.num_partitions + 1):
            seen = []
            for b in range(1, p.num_batches + 1):
                for partition, rows in rows_of(example1_design, b):
                    if partition == t:
                        seen.extend(rows)
            assert seen == list(range(1, p.rows_per_partition + 1))

    def test_cover_on_random_designs(self, example1_params):
        for seed in range(3):
            design = StorageDesign.from_assignment(random_assign(example1_params, seed))
            p = design.params
            for t in range(1, p.num_partitions + 1):
                seen = [
                    row
                    for b in range(1, p.num_batches + 1)
                    for partition, rows in rows_of(design, b)
                    if partition == t
                    for row in rows
                ]
                assert seen == list(range(1, p.rows_per_partition + 1))

    def test_bad_batch_index(self, example1_design):
        with pytest.raises(IndexError):
            rows_of(example1_design, 0)
        with pytest.raises(IndexError):
            rows_of(example1_design, 16)


class TestPersistence:
    def test_golden_file(self, example1_design):
        buffer = io.StringIO()
        save_design(example1_design, buffer)
        assert buffer.getvalue() == (DATA / "example1.design").read_text()

    def test_text_round_trip(self, example1_design, tmp_path):
        path = tmp_path / "design.txt"
        save_design(example1_design, path)
        assert load_design(path) == example1_design

    def test_json_round_trip(self, example1_design, tmp_path):
        path = tmp_path / "design.json"
        save_design(example1_design, path)
        assert path.read_text().lstrip().startswith("{")
        assert load_design(path) == example1_design

    def test_round_trip_random_designs(self, tmp_path):
        for K, q, muq in [(4, 2, 1), (6, 4, 2), (5, 5, 3)]:
            p = make_params(K, q, muq)
            design = StorageDesign.from_assignment(random_assign(p, seed=1))
            for name in ("d.txt", "d.json"):
                path = tmp_path / f"{K}{q}{muq}{name}"
                save_design(design, path)
                assert load_design(path) == design

    def test_heuristic_design_reload_matches_regenerated(self, fig1_params, tmp_path):
        p = fig1_params.with_partitions(250)
        design = StorageDesign.from_assignment(heuristic_assign(p))
        path = tmp_path / "fig1.design"
        save_design(design, path)
        assert load_design(path) == StorageDesign.from_assignment(heuristic_assign(p))

    def test_bad_row_sum_reports_condition_1(self, example1_design):
        text = (DATA / "example1.design").read_text().splitlines()
        text[1] = "1 1,2 1 0 0 0 0"  # row sums to 1 instead of 2
        with pytest.raises(DesignValidationError, match="row sum"):
            load_design("\n".join(text))

    def test_bad_column_sum_reports_condition_2(self):
        text = (DATA / "example1.design").read_text().splitlines()
        text[1] = "1 1,2 0 2 0 0 0"  # shifts a partition's total
        with pytest.raises(DesignValidationError, match="column sum"):
            load_design("\n".join(text))

    def test_parse_error_names_line(self):
        text = (DATA / "example1.design").read_text().splitlines()
        text[3] = "3 1,4 2 0 x 0 0"
        with pytest.raises(DesignFormatError, match="line 4"):
            load_design("\n".join(text))

    def test_wrong_label_rejected(self):
        text = (DATA / "example1.design").read_text().splitlines()
        text[1] = "1 1,3 2 0 0 0 0"
        with pytest.raises(DesignFormatError, match="label"):
            load_design("\n".join(text))

    def test_missing_header_field(self):
        with pytest.raises(DesignFormatError, match="header"):
            load_design("m=20 n=4 N=4 K=6 r=30 T=5\n")


class TestStorageFractionParsing:
    def test_accepts_rationals(self):
        assert parse_storage_fraction("1/3") == Fraction(1, 3)
        assert parse_storage_fraction("1") == 1

    @pytest.mark.parametrize("text", ["0.5", "1e-1", "a/b", "-1/2", ""])
    def test_rejects_non_rationals(self, text):
        with pytest.raises(Exception):
            parse_storage_fraction(text)


class TestStorageDesign:
    def test_labels_must_be_canonical(self, example1_params):
        matrix = heuristic_assign(example1_params)
        good = tuple(enumerate_batch_labels(6, 2))
        with pytest.raises(DesignValidationError):
            StorageDesign(example1_params, tuple(reversed(good)), matrix)

    def test_invalid_assignment_rejected(self, example1_params):
        with pytest.raises(DesignValidationError):
            StorageDesign.from_assignment(AssignmentMatrix.zeros(example1_params))
