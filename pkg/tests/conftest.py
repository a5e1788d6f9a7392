import time
from dataclasses import dataclass

import numpy as np
import pytest

from bicilab.ace import select_n_of_m
from bicilab.model import ModelConfig, forward_graph, init_params
from bicilab.model.toy import tone_scenes, toy_config, toy_train_config
from bicilab.model.training import evaluate_loss, fit, loss_terms
from bicilab.runtime.gradcheck import check_gradients

_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _criteria.setdefault(number, {"title": title, "ok": True, "seconds": 0.0, "ran": False})
    if report.when in ("setup", "call"):
        entry["seconds"] += report.duration  # setup covers shared training fixtures
    if report.when == "call" or report.failed:
        entry["ran"] = True
        entry["ok"] = entry["ok"] and not report.failed


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        e = _criteria[number]
        status = "PASS" if e["ran"] and e["ok"] else ("SKIP" if not e["ran"] else "FAIL")
        terminalreporter.write_line(f"[{status}] criterion {number:2d}: {e['title']} ({e['seconds']:.1f} s)")


@dataclass
class ToyRun:
    toy: object
    initial_loss: float
    final_loss: float
    result: object
    seconds: float


@pytest.fixture(scope="session")
def toy_run():
    """Reduced fused model trained on eight tone scenes; shared by several tests."""
    start = time.perf_counter()
    toy = tone_scenes()
    cfg = toy_config()
    init = init_params(cfg, "fused", 0)
    initial = evaluate_loss("fused", init, toy.examples, cfg)
    res = fit(toy.examples, toy.examples, cfg, "fused", toy_train_config(seed=0), init=init)
    final = evaluate_loss("fused", res.params, toy.examples, cfg)
    return ToyRun(toy, initial, final, res, time.perf_counter() - start)


@dataclass
class GradCheck:
    names: list
    errors: list
    seconds: float


@pytest.fixture(scope="session")
def fused_gradcheck():
    """Finite-difference check of the total loss against every reduced-model parameter."""
    start = time.perf_counter()
    cfg = ModelConfig.toy()
    rng = np.random.default_rng(3)
    # move biases, gains and slopes off their init values so every path carries gradient
    params = {k: v + 0.1 * rng.standard_normal(v.shape) for k, v in init_params(cfg, "fused", 1).items()}
    names = list(params)
    xl, xr = rng.standard_normal((2, 40)) * 0.3
    frames = cfg.latent_frames(40)
    p_clean = [rng.uniform(0, 1, (cfg.m_channels, frames)) for _ in range(2)]
    masks = [select_n_of_m(p, 2) for p in p_clean]

    def total_loss(*tensors):
        outs = forward_graph("fused", xl, xr, dict(zip(names, tensors)), cfg)
        return loss_terms(outs, p_clean, masks)[0]

    errors = check_gradients(total_loss, [params[n] for n in names])
    return GradCheck(names, errors, time.perf_counter() - start)
