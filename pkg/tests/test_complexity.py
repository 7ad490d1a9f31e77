"""Closed-form FLOP model: frozen evaluations, ratio claims, internal consistency."""

import csv

import pytest

from tokensieve.complexity import (
    CostConfig,
    build_report,
    flops_deformable,
    flops_enhancement,
    flops_selfattn,
    format_summary,
    sweep_rows,
    write_sweep_csv,
)

# frozen direct evaluations of the per-layer formulas at the common setting
ENC_DEFORM_10K = 3_573_760_000.0  # (4*256 + 3*8*4 + 256 + 5*4) * 10000 * 256
DEC_DEFORM_900 = 321_638_400.0
DEC_SELF_900 = 325_324_800.0  # 2*900*256^2 + 900^2*256
ENHANCEMENT_300 = 62_361_600.0  # 2*300*256^2 + 300^2*256


class TestFormulas:
    def test_deformable_at_encoder_scale(self):
        assert flops_deformable(10_000, 4, 256, 8) == ENC_DEFORM_10K

    def test_deformable_at_decoder_scale(self):
        assert flops_deformable(900, 4, 256, 8) == DEC_DEFORM_900

    def test_deformable_linear_in_queries(self):
        base = flops_deformable(1234, 4, 256, 8)
        assert flops_deformable(2468, 4, 256, 8) == 2 * base

    def test_selfattn_at_decoder_scale(self):
        assert flops_selfattn(900, 256) == DEC_SELF_900

    def test_selfattn_single_query(self):
        c = 64
        assert flops_selfattn(1, c) == 2 * c * c + c

    def test_enhancement_matches_selfattn_form(self):
        assert flops_enhancement(300, 256) == ENHANCEMENT_300
        assert flops_enhancement(300, 256) == flops_selfattn(300, 256)

    def test_nonpositive_rejected(self):
        with pytest.raises(ValueError):
            flops_deformable(0, 4, 256, 8)
        with pytest.raises(ValueError):
            flops_selfattn(-5, 256)
        with pytest.raises(ValueError):
            flops_enhancement(0, 256)


class TestBuildReport:
    def test_default_counts(self):
        report = build_report(CostConfig())
        assert report.enc_deformable == ENC_DEFORM_10K
        assert report.dec_deformable == DEC_DEFORM_900
        assert report.dec_self_attn == DEC_SELF_900
        assert report.enhancement == ENHANCEMENT_300

    def test_ratio_cross_only_is_query_ratio(self):
        report = build_report(CostConfig())
        assert report.ratio_cross_only == pytest.approx(10_000 / 900, rel=1e-12)
        assert report.ratio_cross_only == pytest.approx(11.11, abs=5e-3)

    def test_ratio_with_self_attention(self):
        report = build_report(CostConfig())
        expect = ENC_DEFORM_10K / (DEC_DEFORM_900 + DEC_SELF_900)
        assert report.ratio_with_self == pytest.approx(expect, rel=1e-12)
        assert report.ratio_with_self == pytest.approx(5.52, abs=5e-3)

    def test_enhancement_ratio_below_claimed_bound(self):
        report = build_report(CostConfig())
        expect = ENHANCEMENT_300 / (ENC_DEFORM_10K + DEC_DEFORM_900)
        assert report.enhancement_ratio == pytest.approx(expect, rel=1e-12)
        assert report.enhancement_ratio == pytest.approx(0.01601, abs=1e-5)
        assert report.enhancement_ratio < 0.025

    def test_reduction_at_gamma_03(self):
        report = build_report(CostConfig(keep_ratio=0.3))
        dense = ENC_DEFORM_10K + DEC_DEFORM_900
        pruned = 0.3 * ENC_DEFORM_10K + DEC_DEFORM_900
        expect = 100.0 * (1.0 - pruned / dense)
        assert report.reduction_pct_cross_only == pytest.approx(expect, rel=1e-12)
        assert report.reduction_pct_cross_only == pytest.approx(64.22, abs=0.01)
        assert report.reduction_pct_cross_only > 60.0
        # the cross+self accounting lands below the 60% mark
        assert report.reduction_pct_with_self == pytest.approx(59.27, abs=0.01)

    def test_reduction_strictly_decreasing_in_gamma(self):
        previous = None
        for step in range(1, 11):
            r = build_report(CostConfig(keep_ratio=step / 10.0))
            if previous is not None:
                assert r.reduction_pct_cross_only < previous
            previous = r.reduction_pct_cross_only
        assert previous == pytest.approx(0.0, abs=1e-12)

    def test_internal_consistency(self):
        report = build_report(CostConfig(keep_ratio=0.45, encoder_layers=4, decoder_layers=2))
        assert report.enc_total == report.enc_deformable * 4
        assert report.dec_cross_total == report.dec_deformable * 2
        assert report.ratio_cross_only == pytest.approx(
            report.enc_total / report.dec_cross_total, rel=1e-12
        )
        assert report.ratio_with_self == pytest.approx(
            report.enc_total / (report.dec_cross_total + report.dec_self_total), rel=1e-12
        )
        assert report.enhancement_ratio == pytest.approx(
            report.enhancement_total / (report.enc_total + report.dec_cross_total),
            rel=1e-12,
        )

    def test_layer_counts_cancel_in_default_ratios(self):
        shallow = build_report(CostConfig(encoder_layers=1, decoder_layers=1))
        deep = build_report(CostConfig(encoder_layers=6, decoder_layers=6))
        assert shallow.ratio_cross_only == pytest.approx(deep.ratio_cross_only, rel=1e-12)
        assert shallow.enhancement_ratio == pytest.approx(deep.enhancement_ratio, rel=1e-12)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            CostConfig(keep_ratio=0.0)
        with pytest.raises(ValueError):
            CostConfig(keep_ratio=1.5)
        with pytest.raises(ValueError):
            CostConfig(embed_dim=0)
        with pytest.raises(ValueError):
            CostConfig.from_dict({"bogus": 1})


class TestSweep:
    def test_rows_cover_gamma_grid(self):
        rows = sweep_rows(CostConfig())
        assert [r["gamma"] for r in rows] == [s / 10 for s in range(1, 11)]
        assert rows[2]["reduction_pct"] == pytest.approx(64.22, abs=0.01)
        assert rows[-1]["reduction_pct"] == pytest.approx(0.0, abs=1e-12)

    def test_csv_columns(self, tmp_path):
        path = tmp_path / "sweep.csv"
        write_sweep_csv(CostConfig(), path)
        with open(path) as fh:
            reader = csv.DictReader(fh)
            assert reader.fieldnames == [
                "gamma",
                "enc_flops",
                "dec_cross",
                "dec_self",
                "enhancement",
                "ratio_cross_only",
                "ratio_with_self",
                "reduction_pct",
            ]
            rows = list(reader)
        assert len(rows) == 10
        assert float(rows[9]["enc_flops"]) == ENC_DEFORM_10K

    def test_summary_mentions_both_accountings(self):
        text = format_summary(build_report(CostConfig()))
        assert "cross only" in text
        assert "cross+self" in text
