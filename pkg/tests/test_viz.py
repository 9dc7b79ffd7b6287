import re

import numpy as np
import pytest

from synccap.viz import (aggregate_rows, read_attention_csv, render_svg, write_attention_csv,
                         write_centers_csv)


def test_grid_and_outlines():
    beta = np.random.default_rng(0).dirichlet(np.ones(5), size=3)
    svg = render_svg(beta, ["a", "b", "c"])
    assert svg.count('class="cell"') == 15
    assert svg.count('class="argmax"') == 3


def test_all_zero_row_rejected():
    beta = np.array([[0.5, 0.5], [0.0, 0.0]])
    with pytest.raises(ValueError, match="row 1"):
        render_svg(beta, ["a", "b"])


def test_monotone_centres_make_a_staircase():
    beta = np.zeros((4, 12))
    for i in range(4):
        beta[i, 3 * i] = 0.7
        beta[i, 3 * i + 1] = 0.3
    svg = render_svg(beta, list("wxyz"), spec=None)
    xs = [float(x) for x in re.findall(r'class="argmax" x="([\d.]+)"', svg)]
    assert xs == sorted(xs) and len(set(xs)) == 4


def test_segment_bands():
    svg = render_svg(np.eye(3), list("abc"), segments=[("walk", 0, 1), ("sit", 2, 2)])
    assert svg.count('class="segment"') == 2 and "walk [0,1]" in svg


def test_csv_round_trip(tmp_path):
    beta = np.random.default_rng(1).dirichlet(np.ones(7), size=4)
    toks = ["a", "person", "walks", "<eos>"]
    path = tmp_path / "att.csv"
    write_attention_csv(path, toks, beta)
    assert path.read_text().splitlines()[0] == "token,0,1,2,3,4,5,6"
    got_toks, got = read_attention_csv(path)
    assert got_toks == toks and np.array_equal(got, beta)


def test_centers_csv(tmp_path):
    path = tmp_path / "c.csv"
    write_centers_csv(path, ["a", "b"], [0.5, 3.25], [(0, 4), (1, 9)])
    assert path.read_text().splitlines() == ["step,token,center,window_start,window_end",
                                             "0,a,0.5,0,4", "1,b,3.25,1,9"]


def test_aggregate():
    beta = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]])
    labels, rows = aggregate_rows(beta, ["walks", "forward", "then"],
                                  [{"span": [0, 1], "label": "walks forward"}, [2, 2]])
    assert labels == ["walks forward", "then"]
    np.testing.assert_array_equal(rows, [[0.5, 0.5], [0.5, 0.5]])
    with pytest.raises(ValueError):
        aggregate_rows(beta, ["a", "b", "c"], [[1, 5]])


def test_ragged_csv(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("token,0,1\na,0.5\n")
    with pytest.raises(ValueError, match="line 2"):
        read_attention_csv(p)
