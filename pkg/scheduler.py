import asyncio
import logging
from typing import Sequence

from axes import AxisPolicy
from ba import Information, LMConfig
from synth import (
    PARAMETERIZATIONS,
    SCENARIOS,
    BenchReport,
    Scene,
    SceneConfig,
    aggregate,
    generate_scene,
    run_cell,
)

logger = logging.getLogger(__name__)


async def _cell(semaphore: asyncio.Semaphore, cfg: SceneConfig, scene: Scene, param: str,
                lm_cfg: LMConfig, policy: AxisPolicy, information: Information):
    """Run one benchmark cell in a worker thread once a slot is free"""
    async with semaphore:
        return await asyncio.to_thread(
            run_cell, cfg, scene.scenario, param, scene.seed, lm_cfg, policy, information, scene
        )


async def run_cells(
    cfg: SceneConfig,
    parameterizations: Sequence[str] = PARAMETERIZATIONS,
    scenarios: Sequence[str] = SCENARIOS,
    n_seeds: int = 10,
    lm_cfg: LMConfig = LMConfig(),
    policy: AxisPolicy = AxisPolicy(),
    information: Information = Information(),
    threads: int = 1,
    scene: Scene = None,
) -> BenchReport:
    """
    Benchmark cells with at most `threads` solves in flight.

    Each cell owns its graph; rows come back in scenario, seed,
    parameterization order whatever the completion order. With a stored
    scene only that scene's (scenario, seed) is run.
    """
    semaphore = asyncio.Semaphore(max(1, threads))
    if scene is not None:
        scenes = [scene]
    else:
        keys = [(scenario, seed) for scenario in scenarios for seed in range(cfg.seed, cfg.seed + n_seeds)]
        scenes = await asyncio.gather(*[
            asyncio.to_thread(generate_scene, cfg, scenario, seed) for scenario, seed in keys
        ])
    logger.info(f"[BENCH] {len(scenes)} scenes x {len(parameterizations)} parameterizations, {threads} thread(s)")

    tasks = [
        _cell(semaphore, cfg, s, param, lm_cfg, policy, information)
        for s in scenes
        for param in parameterizations
    ]
    rows = list(await asyncio.gather(*tasks))
    return BenchReport(rows, aggregate(rows))


def run_benchmark_concurrent(*args, **kwargs) -> BenchReport:
    return asyncio.run(run_cells(*args, **kwargs))
