from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from yanasim.netgraph import (
    Graph,
    GraphFileError,
    LayerSpec,
    parse_graph,
    prune_magnitude,
    quantize_graph,
    validate_capacity,
    write_graph,
)
from yanasim.numerics import FxFormat
from yanasim.synth import synth_graph


def small_graph(w_in, w_out=None, w_rec=None, hidden=None):
    w_in = np.asarray(w_in, dtype=float)
    h = w_in.shape[1]
    w_out = np.ones((h, 1)) if w_out is None else w_out
    return Graph(w_in.shape[0], LayerSpec("lif", h, Fraction(2), 1.0),
                 LayerSpec("li", np.shape(w_out)[1], Fraction(4)), w_in, w_out, w_rec)


class TestParse:
    def test_fixture(self, fixtures_dir):
        g = parse_graph(fixtures_dir / "net211.graph")
        assert g.w_in.shape == (2, 1) and g.w_out.shape == (1, 1)
        assert g.w_in[:, 0].tolist() == [1.0, -0.5]
        assert g.hidden.tau_mem == 2 and g.hidden.threshold == 0.4
        assert g.w_rec is None

    def _graph(self, tmp_path, layer_line="layer hidden lif size=1 tau=2 threshold=0.4",
               in_rows="1.0\n-0.5\n", rec=None):
        (tmp_path / "n.in.wcsv").write_text(in_rows)
        (tmp_path / "n.out.wcsv").write_text("0.75\n")
        lines = ["# yana-graph v1", "input 2", layer_line,
                 "layer output li size=1 tau=3/2",
                 "weights input->hidden file=n.in.wcsv",
                 "weights hidden->output file=n.out.wcsv"]
        if rec is not None:
            (tmp_path / "n.rec.wcsv").write_text(rec)
            lines.append("weights hidden->hidden file=n.rec.wcsv")
        p = tmp_path / "n.graph"
        p.write_text("\n".join(lines) + "\n")
        return p

    def test_rational_tau_and_recurrence(self, tmp_path):
        g = parse_graph(self._graph(tmp_path, rec="0.25\n"))
        assert g.output.tau_mem == Fraction(3, 2)
        assert g.w_rec.tolist() == [[0.25]]

    def test_row_mismatch_names_file(self, tmp_path):
        with pytest.raises(GraphFileError, match="n.in.wcsv"):
            parse_graph(self._graph(tmp_path, in_rows="1.0\n"))

    def test_column_mismatch(self, tmp_path):
        with pytest.raises(GraphFileError, match="n.in.wcsv:2"):
            parse_graph(self._graph(tmp_path, in_rows="1.0\n1.0,2.0\n"))

    @pytest.mark.parametrize("line", [
        "layer hidden adex size=1 tau=2 threshold=0.4",
        "layer hidden lif size=1 tau=1 threshold=0.4",
        "layer hidden lif size=1 tau=1/2 threshold=0.4",
    ])
    def test_bad_layers(self, tmp_path, line):
        with pytest.raises(GraphFileError):
            parse_graph(self._graph(tmp_path, layer_line=line))

    def test_write_parse_roundtrip(self, tmp_path):
        g = synth_graph(7, 5, 3, seed=2, recurrent=True, tau_hidden=Fraction(7, 3))
        write_graph(g, tmp_path / "g.graph")
        back = parse_graph(tmp_path / "g.graph")
        assert back.hidden == g.hidden and back.output == g.output
        for k, w in g.matrices().items():
            np.testing.assert_array_equal(back.matrices()[k], w)


class TestPrune:
    def test_identity(self):
        g = synth_graph(20, 10, 4, seed=1)
        p = prune_magnitude(g, 0.0)
        np.testing.assert_array_equal(p.w_in, g.w_in)
        np.testing.assert_array_equal(p.w_out, g.w_out)

    def test_unique_smallest(self):
        g = small_graph([[1.0], [-0.5], [2.0]])
        assert prune_magnitude(g, 1 / 3).w_in[:, 0].tolist() == [1.0, 0.0, 2.0]

    def test_ties_row_major(self):
        g = small_graph([[1.0, -1.0], [1.0, 3.0]])
        assert prune_magnitude(g, 0.5).w_in.tolist() == [[0.0, 0.0], [1.0, 3.0]]

    def test_half_of_1000(self):
        rng = np.random.default_rng(0)
        g = small_graph(rng.normal(size=(100, 10)))
        w = prune_magnitude(g, 0.5).w_in
        assert np.count_nonzero(w) == 500
        zeroed = np.abs(g.w_in[w == 0])
        assert zeroed.max() <= np.abs(w[w != 0]).min()

    def test_rejects_fraction(self):
        with pytest.raises(ValueError):
            prune_magnitude(synth_graph(2, 2, 2), 1.0)

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, (6, 5), elements=st.sampled_from([0.0, 0.5, -0.5, 1.0, -2.0, 3.25])),
           st.floats(0, 0.99))
    def test_properties(self, w, p):
        g = small_graph(w, w_rec=np.ones((5, 5)))
        out = prune_magnitude(g, p)
        for before, after in zip(g.matrices().values(), out.matrices().values()):
            nnz = np.count_nonzero(before)
            assert np.count_nonzero(after) == nnz - int(np.floor(p * nnz))
            kept = after != 0
            np.testing.assert_array_equal(after[kept], before[kept])
        again = prune_magnitude(out, 0.0)
        np.testing.assert_array_equal(again.w_in, out.w_in)


class TestQuantize:
    def test_examples(self):
        g = small_graph([[0.5, 0.0]], w_out=np.zeros((2, 3)))
        q = quantize_graph(g)
        assert q.w_in.tolist() == [[128, 0]]
        assert not q.w_out.any()
        assert q.hidden_lut.entries[:4] == (32768, 16384, 8192, 4096)
        assert q.threshold == 256

    def test_sub_lsb_weights_drop_out(self):
        q = quantize_graph(small_graph([[0.001], [-0.001], [0.003]]))
        assert q.w_in[:, 0].tolist() == [0, 0, 1]
        assert q.nnz_in == 1

    @given(arrays(np.float64, (4, 3), elements=st.floats(-100, 100)))
    def test_wide_format_precision(self, w):
        fmt = FxFormat.q(8, 24)
        q = quantize_graph(small_graph(w), weight_fmt=fmt)
        assert np.all(np.abs(q.w_in / 2.0**24 - w) <= 2.0**-24)


class TestCapacity:
    def test_paper_net_fits(self):
        q = quantize_graph(small_graph(np.full((700, 100), 0.5), w_out=np.full((100, 20), -0.5)))
        rep = validate_capacity(q)
        assert rep.ok
        assert rep.usage["hidden"] == {"synapses": 70000, "neurons": 100}
        assert rep.usage["output"] == {"synapses": 2000, "neurons": 20}

    def test_wide_input_rejected(self):
        g = small_graph(np.ones((700, 200)))
        rep = validate_capacity(quantize_graph(g))
        assert [(v.core, v.resource, v.count, v.limit) for v in rep.violations] == [
            ("input", "synapses", 140000, 131072),
            ("hidden", "synapses", 140000, 131072),
        ]

    def test_1025_hidden_rejected(self):
        rep = validate_capacity(quantize_graph(small_graph(np.ones((2, 1025)))))
        assert [(v.core, v.resource) for v in rep.violations] == [("hidden", "neurons")]

    def test_1024_hidden_accepted(self):
        assert validate_capacity(quantize_graph(small_graph(np.ones((2, 1024))))).ok
