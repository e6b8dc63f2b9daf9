"""Shared fixtures: calibration table and the comparison scenario."""
import json
import importlib.resources

import pytest

from fractalqos.control import CalibrationTable
from fractalqos.engine import FlowConfig, NodeParams, ScenarioConfig
from fractalqos.queueing import QoSClass
from fractalqos.trace import AttackSpec, TraceSpec


@pytest.fixture(scope="session")
def calib_table() -> CalibrationTable:
    ref = importlib.resources.files("fractalqos.data").joinpath("calibration.json")
    return CalibrationTable.from_json(json.loads(ref.read_text()))


def comparison_flows(length: int = 2 ** 13) -> list:
    """The four-flow mix used by the method-comparison scenario."""
    return [
        FlowConfig(
            "flow0", "H1", "H2",
            TraceSpec(length=length, target_hurst=0.8, mean_rate=20.0,
                      std_rate=7.0, seed=0),
            QoSClass(qs=0, max_loss=0.01, max_delay_ms=50.0),
        ),
        FlowConfig(
            "flow1", "H1", "H2",
            TraceSpec(length=length, target_hurst=0.7, mean_rate=30.0,
                      std_rate=10.0, cascade_weight=0.55, seed=0),
            QoSClass(qs=1, max_loss=0.03, max_delay_ms=100.0),
        ),
        FlowConfig(
            "flow2", "H1", "H2",
            TraceSpec(length=length, target_hurst=0.8, mean_rate=25.0,
                      std_rate=8.0, seed=0),
            QoSClass(qs=1, max_loss=0.03, max_delay_ms=100.0),
        ),
        FlowConfig(
            "flow3", "H1", "H2",
            TraceSpec(length=length, target_hurst=0.7, mean_rate=25.0,
                      std_rate=8.0, seed=0),
            QoSClass(qs=2, max_loss=0.05, max_delay_ms=200.0),
            attack=AttackSpec(windows=((2000, 2400), (5000, 5600)),
                              intensity_multiplier=8.0),
        ),
    ]


def comparison_scenario(seed: int, mode: str, load: float = 0.7) -> ScenarioConfig:
    overrides = {
        n: NodeParams(service_rate=250.0, buffer=200)
        for n in ("R1", "F", "R2", "R11")
    }
    return ScenarioConfig(
        flows=comparison_flows(),
        method_mode=mode,
        load_ratio=load,
        seed=seed,
        node_overrides=overrides,
        node_defaults=NodeParams(service_rate=60.0, buffer=120),
    )


@pytest.fixture
def scenario_factory():
    return comparison_scenario
