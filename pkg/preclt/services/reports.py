"""
Report Service

Turns an McSummary into files:
- samples.csv: one row per standardized sample
- summary.json: resolved config, seed, moments, KS, pair dependence, rho, verdicts
- histogram_q<q>.csv: plot-ready bins with the reference normal density
- verdicts.txt: plain-text verdict table

The summary JSON carries no timestamps, so it is a pure function of
(config, seed), and the report subcommand rebuilds it from samples.csv.
"""
import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from ..core.exceptions import ConfigValidationError, ReportIOError
from ..core.experiment_config import SAMPLE_MODES, ExperimentConfig, Mode
from .clt import StandardizedSample, gaussian_finite_n_gap
from .engine import McSummary, summarize
from .metrics import Verdict, histogram, ks_critical_value
from .template_loader import template_loader
from .thresholds import thresholds

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["rep_id", "mode", "q", "n", "p", "raw_entry", "t_value", "rho_n"]
HISTOGRAM_COLUMNS = ["bin_left", "bin_right", "count", "density", "ref_density"]
SWEEP_COLUMNS = ["distribution", "nu4", "y", "n", "p", "replicates", "normalizer", "rho_limit",
                 "reference_var", "mean", "variance", "variance_se", "ks", "config_hash"]


@dataclass
class Report:
    """Files written for one summary, with the verdicts they record"""
    document: Dict[str, Any]
    verdicts: List[Verdict]
    csv_path: Path
    summary_path: Path
    verdicts_path: Path
    histogram_paths: List[Path] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not any(v.failed for v in self.verdicts)

# =============================================================================
# VERDICTS
# =============================================================================

def finite_n_gap(cfg: ExperimentConfig) -> float:
    """Gaussian finite-n KS gap at m = n - p + 1; 0 when undefined"""
    if cfg.p is None or cfg.n is None or cfg.n - cfg.p + 1 <= 2:
        return 0.0
    return gaussian_finite_n_gap(cfg.n - cfg.p + 1)


def sample_verdicts(summary: McSummary) -> List[Verdict]:
    """
    Assertions checked on every per-replicate run.

    The KS limit is the inflated Kolmogorov critical value plus the Gaussian
    finite-n gap, which does not shrink with the replicate count.
    """
    cfg = summary.config
    if not summary.samples:
        return [Verdict.skipped("samples", "empty summary")]

    ks_cfg = thresholds.get("ks")
    mean_factor = thresholds.get("mean_se_factor")
    gap = finite_n_gap(cfg) if summary.moments else 0.0
    verdicts: List[Verdict] = []
    for q, moments in summary.moments.items():
        ref = summary.reference[q]
        verdicts.append(Verdict.below(f"mean_centering_q{q}", abs(moments.mean - ref["mean"]),
                                      mean_factor * moments.mean_se))
        critical = ks_critical_value(moments.count, ks_cfg["alpha"], ks_cfg["inflation"])
        verdicts.append(Verdict.below(f"ks_q{q}", summary.ks[q], critical + gap))
        verdicts.append(Verdict.reported(f"variance_q{q}", moments.variance, f"reference {ref['var']:.6g}"))
        if q in summary.ks_rho_n:
            verdicts.append(Verdict.reported(f"ks_rho_n_q{q}", summary.ks_rho_n[q], f"critical {critical:.6g}"))

    if any(s.rho_n is not None for s in summary.samples):
        verdicts.append(Verdict.holds("rho_n_lower_bound", summary.rho["rho_n_lower_bound_ok"]))

    if cfg.mode is Mode.PAIR and summary.pair is not None:
        factor = thresholds.get("pair_corr_se_factor")
        limit = factor / math.sqrt(summary.pair.count)
        verdicts.append(Verdict.below("pair_corr_abs", abs(summary.pair.corr), limit))

    if cfg.mode is Mode.CHI_SQUARE_LAW and "chi_square" in summary.extra:
        count = summary.replicates
        critical = ks_critical_value(count, ks_cfg["alpha"], ks_cfg["inflation"])
        verdicts.append(Verdict.below("ks_chi_square_law", summary.extra["chi_square"]["ks"], critical))

    if cfg.mode is Mode.WISHART_COV:
        report = summary.extra.get("wishart", {})
        if report.get("empirical") is None:
            verdicts.append(Verdict.skipped("wishart_cov"))
        elif cfg.sigma.is_diagonal:
            # Both candidates vanish here; the finite-n value is of order 1/k
            se = report["se"]
            centre = report["exact"] if report["exact"] is not None else 0.0
            z = abs(report["empirical"] - centre) / se if se > 0 else math.inf
            verdicts.append(Verdict.below("wishart_cov_diagonal_se_units", z, thresholds.get("wishart_se_factor")))
        else:
            verdicts.append(Verdict.reported("wishart_cov_empirical", report["empirical"],
                                             f"closer candidate: {report['closer']}"))
    return verdicts


def evaluate_verdicts(summary: McSummary) -> List[Verdict]:
    verdicts = sample_verdicts(summary) if summary.config.mode in SAMPLE_MODES else []
    verdicts.extend(summary.verdicts)
    if not verdicts:
        verdicts.append(Verdict.skipped(summary.config.mode.value, "no assertions"))
    return verdicts

# =============================================================================
# SERIALIZATION
# =============================================================================

def _jsonable(value: Any) -> Any:
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, Verdict):
        return _jsonable(value.to_dict())
    if hasattr(value, "item"):
        return _jsonable(value.item())
    return value


def summary_document(summary: McSummary, verdicts: Optional[List[Verdict]] = None) -> Dict[str, Any]:
    """The summary JSON content; floats are shortest round-trip reprs, as in every CSV"""
    verdicts = verdicts if verdicts is not None else evaluate_verdicts(summary)
    document = {
        "config": summary.config.to_dict(),
        "seed": summary.master_seed,
        "config_hash": summary.config_hash,
        "mode": summary.config.mode.value,
        "replicates": summary.replicates,
        "audits": summary.audits,
        "moments": {q: m.to_dict() for q, m in summary.moments.items()},
        "reference": summary.reference,
        "ks": summary.ks,
        "ks_rho_n": summary.ks_rho_n,
        "pair": summary.pair.to_dict() if summary.pair else None,
        "rho": summary.rho,
        "experiment": summary.extra,
        "verdicts": verdicts,
    }
    return _jsonable(document)


def verdict_table(mode: str, config_hash: str, seed: int, replicates: int, verdicts: List[Verdict]) -> str:
    """Plain-text verdict table from templates/verdicts.txt.j2"""
    return template_loader.render(
        "verdicts.txt.j2",
        mode=mode,
        config_hash=config_hash,
        seed=seed,
        replicates=replicates,
        verdicts=verdicts,
        passed=sum(1 for v in verdicts if v.status == "pass"),
        failed=sum(1 for v in verdicts if v.failed),
        other=sum(1 for v in verdicts if v.status in ("skipped", "reported")),
    )


def format_float(value: Optional[float]) -> str:
    """Shortest string that parses back to the same double; json.dumps writes floats the same way"""
    return "" if value is None else repr(float(value))


def _cell(value: Any) -> Any:
    if value is None:
        return ""
    return format_float(value) if isinstance(value, float) else value


def write_sweep_csv(rows: List[Dict[str, Any]], path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            writer.writerow([_cell(row[c]) for c in SWEEP_COLUMNS])


def write_samples_csv(samples: List[StandardizedSample], path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for s in samples:
            writer.writerow([s.rep_id, s.mode, s.q, s.n, s.p,
                             format_float(s.raw_entry), format_float(s.t_value), format_float(s.rho_n)])


def read_samples_csv(path: Union[str, Path]) -> List[StandardizedSample]:
    """
    Parse samples.csv back into samples.

    Raises:
        ReportIOError: unreadable file, wrong header or malformed rows
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != CSV_COLUMNS:
                raise ReportIOError(f"{path}: expected columns {','.join(CSV_COLUMNS)}, got {header}")
            samples = []
            for line_no, row in enumerate(reader, start=2):
                try:
                    rep_id, mode, q, n, p, raw, t, rho = row
                    samples.append(StandardizedSample(
                        int(rep_id), mode, int(q), int(n), int(p), float(raw), float(t),
                        float(rho) if rho else None,
                    ))
                except ValueError as e:
                    raise ReportIOError(f"{path}:{line_no}: malformed row {row}: {e}")
    except OSError as e:
        raise ReportIOError(f"Cannot read samples file {path}: {e}")
    return samples


def write_histograms(summary: McSummary, out_dir: Path) -> List[Path]:
    paths: List[Path] = []
    if summary.config.mode not in SAMPLE_MODES:
        return paths
    for q in summary.config.q_indices:
        path = out_dir / f"histogram_q{q}.csv"
        values = summary.values(q)
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(HISTOGRAM_COLUMNS)
            if values.size:
                ref = summary.reference[q]
                hist = histogram(values, ref["mean"], ref["var"])
                for left, right, count, density, ref_density in hist.rows():
                    writer.writerow([format_float(left), format_float(right), count,
                                     format_float(density), format_float(ref_density)])
        paths.append(path)
    return paths

# =============================================================================
# REPORT SERVICE
# =============================================================================

class ReportService:
    """Writes and regenerates run reports"""

    def write(self, summary: McSummary, out_dir: Optional[Union[str, Path]] = None) -> Report:
        """
        Write all report files for summary.

        Args:
            summary: completed summary (may be empty)
            out_dir: target directory, default summary.config.output_dir

        Returns:
            Report with paths and verdicts

        Raises:
            ReportIOError: any file cannot be written
        """
        out = Path(out_dir) if out_dir is not None else summary.config.output_dir
        verdicts = evaluate_verdicts(summary)
        document = summary_document(summary, verdicts)
        try:
            out.mkdir(parents=True, exist_ok=True)
            csv_path = out / "samples.csv"
            write_samples_csv(summary.samples, csv_path)
            summary_path = out / "summary.json"
            summary_path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")
            histogram_paths = write_histograms(summary, out)
            if "sweep" in summary.extra:
                write_sweep_csv(summary.extra["sweep"]["rows"], out / "sweep.csv")
            verdicts_path = out / "verdicts.txt"
            verdicts_path.write_text(self.render_verdicts(summary, verdicts), encoding="utf-8")
        except OSError as e:
            raise ReportIOError(f"Cannot write report to {out}: {e}")

        failed = sum(1 for v in verdicts if v.failed)
        logger.info(f"Report written to {out}: {len(verdicts)} verdicts, {failed} failed")
        return Report(document, verdicts, csv_path, summary_path, verdicts_path, histogram_paths)

    def render_verdicts(self, summary: McSummary, verdicts: List[Verdict]) -> str:
        return verdict_table(summary.config.mode.value, summary.config_hash, summary.master_seed,
                             summary.replicates, verdicts)

    def regenerate(self, csv_path: Union[str, Path], cfg: ExperimentConfig,
                   out_dir: Optional[Union[str, Path]] = None) -> Report:
        """
        Rebuild the summary of a per-replicate run from its samples.csv.

        Raises:
            ConfigValidationError: mode has no per-sample CSV, or the CSV does
                not match the config
            ReportIOError: unreadable CSV
        """
        if cfg.mode not in SAMPLE_MODES:
            raise ConfigValidationError(f"Mode {cfg.mode.value} has no per-sample CSV to regenerate from")
        samples = read_samples_csv(csv_path)
        modes = {s.mode for s in samples}
        if modes and modes != {cfg.mode.value}:
            raise ConfigValidationError(f"CSV holds modes {sorted(modes)} but config says {cfg.mode.value}")
        replicates = len({s.rep_id for s in samples})
        if replicates != cfg.replicates:
            raise ConfigValidationError(f"CSV holds {replicates} replicates but config says {cfg.replicates}")
        summary = summarize(samples, cfg)
        return self.write(summary, out_dir if out_dir is not None else Path(csv_path).parent)


# Global report service instance
report_service = ReportService()


def write_report(summary: McSummary, cfg: Optional[ExperimentConfig] = None,
                 out_dir: Optional[Union[str, Path]] = None) -> Report:
    """
    Write CSV, JSON, histogram CSVs and the verdict table for summary.

    The target directory is out_dir, else the output_dir of cfg (or of the
    summary's own config).
    """
    if out_dir is None:
        out_dir = (cfg or summary.config).output_dir
    return report_service.write(summary, out_dir)
