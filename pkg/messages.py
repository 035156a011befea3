from typing import Dict, Sequence

from synth import PARAMETERIZATIONS, SCENARIOS, BenchReport, Scene
from vanish import VPResult

SCENARIO_TITLES = {"fixed": "Fixed poses", "small": "Small noise", "large": "Large noise"}
METRICS = (("time_s", "Time (s)"), ("error_l", "Error_l"), ("trans_rmse", "Trans."))


def format_number(value: float) -> str:
    return "  n/a" if value != value else f"{value:.3f}"


def get_bench_table(report: BenchReport, params: Sequence[str] = PARAMETERIZATIONS) -> str:
    """Results grid: one block per scenario, one column per parameterization"""
    params = [p for p in params if any(r.param == p for r in report.results)]
    scenarios = [s for s in SCENARIOS if any(r.scenario == s for r in report.results)]
    scenarios += sorted({r.scenario for r in report.results} - set(scenarios))
    header = f"{'':<14}{'':<10}" + "".join(f"{p:>10}" for p in params)
    lines = [header, "-" * len(header)]
    for scenario in scenarios:
        title = SCENARIO_TITLES.get(scenario, scenario)
        for i, (attr, label) in enumerate(METRICS):
            cells = "".join(f"{format_number(getattr(report.cell(scenario, p), attr)):>10}" for p in params)
            lines.append(f"{title if i == 0 else '':<14}{label:<10}{cells}")
    diverged = sum(r.n_diverged for r in report.results)
    if diverged:
        lines.append(f"\n⚠️ {diverged} run(s) diverged and were excluded from the means")
    return "\n".join(lines)


def get_vp_summary(result: VPResult) -> str:
    lines = [f"proposals: {result.proposal_count}"]
    if result.best_index is not None:
        lines.append(f"best proposal: {result.best_index}°")
    for label, vp in result.vps.items():
        residual = result.residuals.get(label)
        lines.append(f"{label}: vp=[{vp[0]:.6f}, {vp[1]:.6f}, {vp[2]:.6f}] residual={residual:.3e}")
    counts: Dict[str, int] = {}
    for label in result.classes.values():
        counts[label] = counts.get(label, 0) + 1
    if counts:
        lines.append("segments: " + ", ".join(f"{label}={n}" for label, n in sorted(counts.items())))
    return "\n".join(lines)


def get_scene_summary(scene: Scene, path=None) -> str:
    message = f"""Scene seed={scene.seed} scenario={scene.scenario}
axes: {len(scene.axes_true)}, lines: {len(scene.lines_true)}, points: {len(scene.points_true)}, poses: {len(scene.poses_true)}
segments: {len(scene.segment_obs)}, point observations: {len(scene.point_obs)}"""
    if path:
        message += f"\nwritten to {path}"
    return message
