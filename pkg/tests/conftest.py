import pytest

from copycat.attack import AttackVariant
from copycat.core import Position, Role
from copycat.engine import ScenarioConfig


def small_cfg(**kw):
    """Five nodes, two simulated minutes: cheap enough for many seeds."""
    base = dict(
        area_m=80.0,
        n_sensors=4,
        n_attackers=1,
        sim_seconds=120.0,
        attacker_activation_s=30.0,
        data_interval_s=10.0,
        replications=1,
    )
    base.update(kw)
    return ScenarioConfig(**base)


def line_topology(n, spacing=40.0, attacker_at=None):
    """Root at the origin and ``n`` sensors on a line, ``spacing`` metres apart."""
    topo = [(0, Position(0.0, 0.0), Role.ROOT)]
    topo += [(i, Position(i * spacing, 0.0), Role.SENSOR) for i in range(1, n + 1)]
    if attacker_at is not None:
        topo.append((n + 1, Position(*attacker_at), Role.ATTACKER))
    return topo


@pytest.fixture
def lossless_radio():
    from copycat.radio import RadioParams

    return RadioParams(base_loss_prob=0.0)


VARIANTS = [AttackVariant.NONE, AttackVariant.NON_SPOOFED, AttackVariant.SPOOFED]


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
