# File: src/pipeline.py

"""Main pipeline for running and auditing a reach-avoid scenario"""

import time
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from config.settings import Config, get_config

from .controllers import verify_surface_conditions
from .controllers.surface_audit import SurfaceAuditReport
from .functionals import check_small_gain
from .models import ControllerKind, RunReport, SmallGainCertificate
from .reporting import build_report
from .scenario import Scenario, build_scenario
from .simulator import Telemetry, run
from .utils.artifacts import plot_trajectories, write_json, write_telemetry_csv


class ScenarioPipeline:
    """Builds a scenario from configuration, simulates it and writes the artifacts"""

    def __init__(self, config: Optional[Config] = None):
        self.config = config if config is not None else get_config()
        self._scenario: Optional[Scenario] = None

    @property
    def scenario(self) -> Scenario:
        if self._scenario is None:
            self._scenario = build_scenario(self.config.scenario, strict=False)
        return self._scenario

    def check_gains(self) -> SmallGainCertificate:
        """Small-gain certificate of the Lyapunov gain graph"""
        certificate = check_small_gain(self.scenario.problem.gains)
        status = "✅" if certificate.passed else "❌"
        print(f"{status} {certificate}")
        return certificate

    def verify_surface(self, seed: int = 0) -> SurfaceAuditReport:
        """Sampled audit of the sliding-surface boundary and zero-set conditions"""
        print("🔍 Auditing sliding surfaces...")
        audit = verify_surface_conditions(self.scenario.sliding_specs, self.scenario, seed=seed)
        for robot in audit.robots:
            for name, result in (('boundary', robot.boundary), ('zero set', robot.zero_set)):
                print(f"   robot {robot.robot} {name}: {result.status.value} "
                      f"({result.samples} samples, {result.inconclusive} inconclusive)")
        print(f"📊 Surface audit: {audit.status.value.upper()}")
        return audit

    def run_simulation(self, controller: Union[ControllerKind, str, None] = None) -> Tuple[Telemetry, RunReport]:
        """Simulate the configured horizon under one controller stack"""
        kind = ControllerKind(controller) if controller is not None else self.config.controller
        scenario = self.scenario
        sim = self.config.simulation
        print(f"🚀 Simulating {scenario.config.p} robots under the '{kind.value}' controller")
        print(f"📊 dt {sim.dt:g} s, horizon {sim.horizon:g} s, {sim.threads} worker thread(s)")

        start_time = time.time()
        telemetry = run(scenario.model, scenario.controller(kind), scenario.xi, sim)
        elapsed = time.time() - start_time
        print(f"   ⏱️ {telemetry.steps_taken} steps in {elapsed:.1f} s")

        surface_audit = None
        if kind is ControllerKind.SLIDING:
            surface_audit = self.verify_surface().to_dict()
        report = build_report(telemetry, kind.value, scenario.config.targets, scenario.config.ball_radius,
                              check_small_gain(scenario.problem.gains), surface_audit,
                              self.reach_avoid_conflicts(kind, telemetry))
        self.print_summary(report)
        return telemetry, report

    def reach_avoid_conflicts(self, kind: ControllerKind, telemetry: Telemetry) -> List[str]:
        """Covered targets that a barrier-enforcing controller kept its robot from

        Such a robot can only stay safe by stopping short of its target.
        """
        if kind not in (ControllerKind.QP, ControllerKind.SLIDING):
            return []
        cfg = self.scenario.config
        conflicts = []
        for robot in cfg.covered_targets():
            target = cfg.targets[robot - 1]
            covering = [k + 1 for k, ob in enumerate(cfg.obstacles) if ob.clearance(target) <= 0.0]
            rows = telemetry.robot_frame(robot)
            position = rows[['x1', 'x2']].to_numpy(dtype=float)[-1] if len(rows) else np.full(2, np.nan)
            distance = float(np.linalg.norm(position - np.asarray(target)))
            message = (f"reach-avoid conflict: target of robot {robot} lies inside obstacle(s) "
                       f"{covering}; robot held {distance:.4g} m away at t={telemetry.t_final:g}")
            conflicts.append(message)
        return conflicts

    def print_summary(self, report: RunReport):
        """Print summary of a run report"""
        print(f"\n{'='*60}")
        print(f"📊 RUN SUMMARY ({report.controller})")
        print(f"{'='*60}")
        print(f"Status: {report.status.value}")
        print(f"Horizon reached: {report.horizon_reached:g} s")
        min_h = "n/a" if report.min_h is None else f"{report.min_h:.6g}"
        print(f"Minimum safety margin: {min_h}")
        print(f"Small-gain spectral radius: {report.spectral_radius:.6f} "
              f"({'PASS' if report.small_gain_passed else 'FAIL'})")
        if report.qp_infeasible_steps:
            print(f"QP infeasible steps: {report.qp_infeasible_steps}")

        print(f"\n📋 Robots:")
        for robot, (distance, arrival) in enumerate(zip(report.final_distance, report.time_to_ball), 1):
            reached = arrival is not None
            status = "✅" if reached else "❌"
            when = f"in ball after {arrival:g} s" if reached else "outside ball"
            distance_text = "n/a" if distance is None else f"{distance:.4f} m"
            print(f"  {status} robot {robot}: final distance {distance_text}, {when}")
        if report.violation:
            print("❌ Safety violation detected")
        for conflict in report.conflicts:
            print(f"❌ {conflict}")
        for error in report.errors:
            print(f"      Error: {error}")

    def save_results(self, telemetry: Telemetry, report: RunReport,
                     out_dir: Union[str, Path] = "output") -> Dict[str, Path]:
        """Write telemetry.csv, diagnostics.csv, trajectories.svg and report.json"""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        cfg = self.scenario.config
        paths = {
            'telemetry': write_telemetry_csv(telemetry.frame, out_dir / 'telemetry.csv'),
            'diagnostics': write_telemetry_csv(telemetry.diagnostics, out_dir / 'diagnostics.csv'),
            'report': write_json(report.to_dict(), out_dir / 'report.json'),
        }
        try:
            paths['trajectories'] = plot_trajectories(telemetry.frame, cfg.starts, cfg.targets,
                                                      cfg.obstacles, out_dir / 'trajectories.svg')
        except Exception as e:
            print(f"❌ Error plotting trajectories: {e}")
        print(f"💾 Results saved to: {out_dir}")
        return paths
