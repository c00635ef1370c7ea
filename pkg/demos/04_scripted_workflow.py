"""End-to-end four-phase sizing run, replayed from a scripted agent scenario.

The scripted backend answers every agent call from a fixed YAML transcript,
so the whole run is deterministic and needs no API key.  The transcript and
run config live with the test fixtures (tests/data/) because the acceptance
suite replays the very same session.

Run:  python3 demos/04_scripted_workflow.py
"""

import tempfile
from pathlib import Path

from amsizer.config import build_backend, build_state, load_config
from amsizer.trace import TraceLog, render_report
from amsizer.workflow import Workflow

CONFIG = Path(__file__).parent.parent / "tests" / "data" / "two_stage_run.yaml"


def main() -> None:
    cfg = load_config(str(CONFIG))
    state = build_state(cfg)
    backend = build_backend(cfg)
    print(f"config   : {CONFIG}")
    print(f"netlist  : {Path(cfg.netlist_path).name} "
          f"({len(state.circuit.devices)} devices, {len(state.space.names)} parameters)")
    print(f"backend  : scripted, {backend.remaining} canned responses queued")
    print(f"specs    : " + ", ".join(
        f"{s.metric} {s.direction} {s.target:g}" for s in state.specs))

    out_dir = Path(tempfile.mkdtemp(prefix="amsizer_demo_"))
    with TraceLog(path=out_dir / "trace.jsonl") as trace:
        result = Workflow(state, backend, trace, seed=cfg.seed).run()

    print(f"\nstatus   : {result.status}")
    print(f"best fom : {result.best_fom}")
    print("accounting:")
    for key, value in result.accounting.items():
        print(f"  {key:<16} {value}")
    print(f"script fully consumed: {backend.remaining == 0}")

    report = render_report(trace.events)
    (out_dir / "report.md").write_text(report)
    print(f"\nartifacts in {out_dir}")

    # the report narrates every decision; show the accounting table at its end
    lines = report.splitlines()
    start = lines.index("## Accounting")
    print("\n".join(lines[start:]))


if __name__ == "__main__":
    main()
