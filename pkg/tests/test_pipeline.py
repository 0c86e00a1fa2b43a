from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import numpy as np
import pytest

from irforge.errors import ConfigError, MissingExternalOutput, UnknownTask
from irforge.features import ExtractorSpec
from irforge.pairing import PairManifest, PairRecord, sample_pairs, scan_locations
from irforge.pipeline import (
    Density,
    Evaluate,
    ExternalGenerator,
    Grayscale,
    apply_stages,
    find_external,
    plan_for,
    run_pipeline,
    write_run_outputs,
)
from irforge.raster import encode_image, read_image
from irforge.translate import rgb_to_ir

from conftest import make_dataset, write_png

SPEC = ExtractorSpec(patch_size=8, scales=2, filters_per_scale=6)


def ir_oracle(r, g, b, factor):
    v = min(max((r + g + b) / 3 * factor, 0.0), 255.0)
    return int(Decimal(v).quantize(Decimal(1), rounding=ROUND_HALF_UP))


class TestPlans:
    def test_rgb2ir(self):
        plan = plan_for("RGB2IR")
        assert plan.stages == (Grayscale(), Density(1.3))
        assert plan.intensity == 1.3

    def test_sar2ir(self):
        plan = plan_for("sar2ir")
        assert plan.kinds() == [ExternalGenerator, Grayscale, Density]
        assert plan.stages[2] == Density(1.15)

    @pytest.mark.parametrize("task", ["SAR2EO", "SAR2RGB"])
    def test_external_only(self, task):
        assert plan_for(task).kinds() == [ExternalGenerator]

    def test_overrides(self):
        plan = plan_for("RGB2IR", factor=2.0, evaluate=SPEC)
        assert plan.stages == (Grayscale(), Density(2.0), Evaluate(SPEC))
        with pytest.raises(ConfigError):
            plan_for("SAR2EO", factor=1.1)

    def test_unknown(self):
        with pytest.raises(UnknownTask):
            plan_for("IR2RGB")


@pytest.fixture
def rgb_manifest(tmp_path, rng):
    root = make_dataset(tmp_path / "data", {
        "A": {"rgb": ["a1", "a2"], "ir": ["a1", "a2"]},
        "B": {"rgb": ["b1"], "ir": ["b1"]},
    }, rng)
    return sample_pairs(scan_locations(root), "RGB2IR", 3, 5)


class TestRun:
    def test_batch_equals_unit_op(self, tmp_path, rgb_manifest):
        out = tmp_path / "out"
        summary = run_pipeline(plan_for("RGB2IR"), rgb_manifest, out)
        assert (summary.processed, summary.failed, summary.total) == (6, 0, 6)
        for status, rec in zip(summary.records, rgb_manifest.records):
            expected = encode_image(rgb_to_ir(read_image(rec.source), 1.3), "png")
            assert (out / status.detail).read_bytes() == expected

    def test_fault_isolation(self, tmp_path, rgb_manifest):
        clean = run_pipeline(plan_for("RGB2IR"), rgb_manifest, tmp_path / "clean")
        bad = tmp_path / "broken.png"
        bad.write_bytes(b"\x89PNG\r\n\x1a\nnot really")
        records = list(rgb_manifest.records)
        records.insert(2, PairRecord(str(bad), records[0].target, "A"))
        manifest = PairManifest("RGB2IR", 5, tuple(records))
        summary = run_pipeline(plan_for("RGB2IR"), manifest, tmp_path / "dirty")
        assert (summary.processed, summary.failed) == (6, 1)
        assert not summary.records[2].ok and "MalformedFile" in summary.records[2].detail
        for s in clean.records:
            assert (tmp_path / "dirty" / s.detail).read_bytes() == (tmp_path / "clean" / s.detail).read_bytes()

    def test_idempotent(self, tmp_path, rgb_manifest):
        out = tmp_path / "out"
        run_pipeline(plan_for("RGB2IR"), rgb_manifest, out)
        first = {p: p.read_bytes() for p in out.rglob("*.png")}
        run_pipeline(plan_for("RGB2IR"), rgb_manifest, out)
        assert {p: p.read_bytes() for p in out.rglob("*.png")} == first

    def test_sar2ir_with_external_outputs(self, tmp_path, rng):
        root = make_dataset(tmp_path / "data", {"L": {"sar": ["s1", "s2"], "ir": ["t1"]}}, rng, size=(8, 8))
        ext = tmp_path / "ext"
        fakes = {}
        for stem in ("s1", "s2"):
            fakes[stem] = rng.integers(0, 256, (8, 8, 3), dtype=np.uint8)
            write_png(ext / "L" / f"{stem}.png", fakes[stem])
        manifest = sample_pairs(scan_locations(root), "SAR2IR", 4, 1)
        out = tmp_path / "out"
        summary = run_pipeline(plan_for("SAR2IR", external_dir=ext), manifest, out)
        assert summary.failed == 0
        for status, rec in zip(summary.records, manifest.records):
            fake = fakes[Path(rec.source).stem]
            expected = [ir_oracle(*p, 1.15) for p in fake.reshape(-1, 3).tolist()]
            assert read_image(out / status.detail).samples.tolist() == expected

    def test_missing_external_output(self, tmp_path, rng):
        root = make_dataset(tmp_path / "data", {"L": {"sar": ["s1"], "rgb": ["t1"]}}, rng, size=(8, 8))
        manifest = sample_pairs(scan_locations(root), "SAR2RGB", 2, 0)
        (tmp_path / "ext").mkdir()
        summary = run_pipeline(plan_for("SAR2RGB", external_dir=tmp_path / "ext"), manifest, tmp_path / "o")
        assert summary.failed == 2
        assert all("MissingExternalOutput" in r.detail for r in summary.records)
        with pytest.raises(MissingExternalOutput):
            find_external(tmp_path / "ext", manifest.records[0])

    def test_external_required(self, tmp_path, rgb_manifest):
        manifest = PairManifest("SAR2EO", 0, rgb_manifest.records)
        with pytest.raises(ConfigError):
            run_pipeline(plan_for("SAR2EO"), manifest, tmp_path)

    def test_sar2eo_passes_external_through(self, tmp_path, rng):
        root = make_dataset(tmp_path / "data", {"L": {"sar": ["s1"], "eo": ["s1"]}}, rng, size=(8, 8))
        fake = rng.integers(0, 256, (8, 8, 3), dtype=np.uint8)
        write_png(tmp_path / "ext" / "s1.png", fake)
        manifest = sample_pairs(scan_locations(root), "SAR2EO", "all", 0)
        rec = manifest.records[0]
        assert np.array_equal(apply_stages(plan_for("SAR2EO", external_dir=tmp_path / "ext"), rec).pixels, fake)

    def test_workers_identical_with_evaluation(self, tmp_path, rgb_manifest):
        plan = plan_for("RGB2IR", evaluate=SPEC)
        outputs = []
        for w in (1, 3):
            out = tmp_path / f"w{w}"
            summary = run_pipeline(plan, rgb_manifest, out, workers=w)
            write_run_outputs(summary, out)
            assert summary.report is not None
            outputs.append({p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()})
        assert outputs[0] == outputs[1]
        assert Path("run.log") in outputs[0] and Path("report.png") in outputs[0]

    def test_run_log_format(self, tmp_path, rgb_manifest):
        summary = run_pipeline(plan_for("RGB2IR"), rgb_manifest, tmp_path)
        write_run_outputs(summary, tmp_path)
        lines = (tmp_path / "run.log").read_text().splitlines()
        assert len(lines) == 1 + len(rgb_manifest.records)
        assert lines[1].split("\t")[:2] == ["0", "ok"]
        summary_text = (tmp_path / "summary.txt").read_text()
        assert "processed=6\n" in summary_text and "failed=0\n" in summary_text
