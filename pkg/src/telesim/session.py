"""Teleoperation session core: command queue, control token, tick loop.

Transport-free. A server owns the sockets and calls submit()/tick(); tests
drive the same API headlessly. All mutation happens inside tick(), which
drains the queue in arrival order, so races reduce to queue order and the
whole session replays deterministically from (layout seed, message trace).
"""
from __future__ import annotations

import copy
import json
from collections import deque
from dataclasses import dataclass, field

from . import hri
from .follow import FollowConfig, follow_step, select_target
from .mapping import UNKNOWN, OccupancyMap, update_occupancy
from .nav import PointGoalConfig, gate_blocked, run_pointgoal
from .policies import TaskConfig, run_areagoal, run_objectgoal
from .simulator import Action, Simulator
from .world import Point

CLIENT_TYPES = ("join", "take_control", "release_control", "drive",
                "command", "answer")
_ACTIONS = {
    "forward": Action.FORWARD,
    "turn_left": Action.TURN_LEFT,
    "turn_right": Action.TURN_RIGHT,
    "left": Action.TURN_LEFT,
    "right": Action.TURN_RIGHT,
    "stop": Action.STOP,
}


def encode(msg: dict) -> str:
    """Wire form: one sorted-key JSON object, newline terminated."""
    return json.dumps(msg, sort_keys=True, separators=(",", ":")) + "\n"


@dataclass
class TaskRun:
    """A task compiled to an action script, replayed one action per tick."""
    kind: str
    target: object
    variant: str = ""
    actions: list = field(default_factory=list)
    index: int = 0
    phase_split: int | None = None   # composite: actions before this are phase 1
    results: list = field(default_factory=list)
    message: str = ""

    def status(self) -> dict:
        st = {"kind": self.kind, "target": self.target, "state": "running",
              "step": self.index, "total": len(self.actions)}
        if self.variant:
            st["variant"] = self.variant
        if self.phase_split is not None:
            st["phase"] = [1 if self.index < self.phase_split else 2, 2]
        return st

    def final_status(self) -> dict:
        ok = bool(self.results) and all(getattr(r, "success", True)
                                        for r in self.results)
        st = {"kind": self.kind, "target": self.target,
              "state": "done" if ok else "failed"}
        if self.message:
            st["message"] = self.message
        return st


class Session:
    """One simulated robot shared by many clients over a single tick loop."""

    def __init__(self, layout, session_id: str = "s0", seed: int = 0,
                 persons=(), wake_word: str = "robot", budget: int = 500):
        self.id = session_id
        self.layout = layout
        self.sim = Simulator(layout, start=0, seed=seed, persons=persons)
        self.occ = OccupancyMap.for_layout(layout)
        self.budget = budget
        self.tick_no = 0
        self.clients: dict[str, str] = {}       # client_id -> role
        self.control_holder: str | None = None
        self.active_task: TaskRun | None = None
        self.dialogue = hri.Dialogue(wake_word=wake_word)
        self._queue: deque = deque()
        self._outbox: list = []                  # (client_id | None, msg)
        self._pending_drive: Action | None = None
        self._vetoed = False
        self._finished: TaskRun | None = None
        self._sent = self.occ.grid.copy()
        obs = self.sim.observe()
        update_occupancy(self.occ, obs)
        self._last_obs = obs

    # -- inbound ------------------------------------------------------------

    def submit(self, msg: dict):
        """Queue one client message; it is answered during the next tick."""
        self._queue.append(msg)

    def drain(self) -> list:
        out, self._outbox = self._outbox, []
        return out

    # -- message handling (only ever called from tick) -----------------------

    def _send(self, client_id, msg: dict):
        msg["session"] = self.id
        msg["tick"] = self.tick_no
        self._outbox.append((client_id, msg))

    def _error(self, client_id, code: str, message: str):
        self._send(client_id, {"type": "error", "code": code,
                               "message": message})

    def _handle(self, msg):
        if not isinstance(msg, dict) or msg.get("type") not in CLIENT_TYPES:
            self._send(msg.get("client_id") if isinstance(msg, dict) else None,
                       {"type": "error", "code": "bad_message",
                        "message": "unrecognized message type"})
            return
        cid = msg.get("client_id")
        if not isinstance(cid, str) or not cid:
            self._error(None, "bad_message", "client_id required")
            return
        kind = msg["type"]
        if kind == "join":
            self.clients.setdefault(cid, "viewer")
            self._send(cid, {"type": "welcome", "client_id": cid})
            # rejoin support: the newcomer gets the whole explored map once
            self._send(cid, self._state_msg(full_map=True))
            return
        if cid not in self.clients:
            self._error(cid, "unknown_client", "join first")
            return
        getattr(self, "_on_" + kind)(cid, msg)

    def _on_take_control(self, cid, msg):
        if self.control_holder in (None, cid):
            self.control_holder = cid
            for c in self.clients:
                self.clients[c] = "operator" if c == cid else "viewer"
            self._send(cid, {"type": "granted", "controller": cid})
        else:
            self._send(cid, {"type": "denied",
                             "controller": self.control_holder})

    def _on_release_control(self, cid, msg):
        if self.control_holder == cid:
            self.control_holder = None
            self.clients[cid] = "viewer"
            self._send(cid, {"type": "granted", "controller": None})
        else:
            self._send(cid, {"type": "denied",
                             "controller": self.control_holder})

    def _require_holder(self, cid) -> bool:
        if self.control_holder != cid:
            self._error(cid, "not_controller", "not controller")
            return False
        return True

    def _on_drive(self, cid, msg):
        if not self._require_holder(cid):
            return
        if self.active_task is not None:
            self._error(cid, "task_active",
                        "task active; say 'robot stop' first")
            return
        action = _ACTIONS.get(msg.get("action"))
        if action is None:
            self._error(cid, "unknown_action",
                        f"unknown action {msg.get('action')!r}")
            return
        # single slot: the last drive of a tick wins
        self._pending_drive = action
        self._send(cid, {"type": "granted", "action": msg["action"]})

    def _on_command(self, cid, msg):
        if not self._require_holder(cid):
            return
        text = msg.get("text", "")
        out = self.dialogue.submit(text if isinstance(text, str) else "",
                                   context=self.layout)
        if out is None:
            self._error(cid, "no_wake_word", "no wake word; ignored")
            return
        self._dispatch_parse(cid, out)

    def _on_answer(self, cid, msg):
        if not self._require_holder(cid):
            return
        try:
            out = self.dialogue.answer(int(msg.get("id", -1)),
                                       str(msg.get("text", "")))
        except (KeyError, ValueError, TypeError):
            self._error(cid, "unknown_question", "no such open question")
            return
        self._dispatch_parse(cid, out)

    def _dispatch_parse(self, cid, out):
        if isinstance(out, hri.Clarification):
            self._send(cid, {"type": "question", "id": out.id,
                             "text": out.question})
            return
        try:
            self._start_task(out)
        except ValueError as e:
            self._error(cid, "task_failed", str(e))
            return
        self._send(cid, {"type": "granted", "text": out.raw})

    # -- task compilation ----------------------------------------------------

    def _recording_copy(self):
        sim = copy.deepcopy(self.sim)
        actions = []
        orig = sim.act

        def act(a):
            actions.append(a)
            return orig(a)
        sim.act = act
        return sim, actions

    def _start_task(self, instruction: hri.Instruction):
        task = instruction.task
        if isinstance(task, hri.StopTask) or isinstance(task, hri.Manual):
            self.active_task = None
            self._pending_drive = None
            return
        sim, actions = self._recording_copy()
        cfg = TaskConfig(step_budget=self.budget)
        run = None
        if instruction.composite:
            area, obj = instruction.composite
            run = TaskRun("composite", f"{area.region}+{obj.cls}")
            r1 = run_areagoal(sim, area.region, variant=area.variant, cfg=cfg)
            run.phase_split = len(actions)
            run.results.append(r1)
            if r1.success:
                run.results.append(run_objectgoal(sim, obj.cls, cfg=cfg))
        elif isinstance(task, hri.AreaGoal):
            run = TaskRun("area", task.region, variant=task.variant)
            run.results.append(run_areagoal(sim, task.region,
                                            variant=task.variant, cfg=cfg))
        elif isinstance(task, hri.ObjectGoal):
            run = TaskRun("object", task.cls)
            run.results.append(run_objectgoal(sim, task.cls, cfg=cfg))
        elif isinstance(task, hri.PointGoal):
            run = TaskRun("point", [task.x, task.y])
            run.results.append(run_pointgoal(
                sim, Point(task.x, task.y),
                cfg=PointGoalConfig(step_budget=self.budget)))
        elif isinstance(task, hri.Follow):
            run = self._compile_follow(sim, actions)
        else:
            raise ValueError(f"unsupported task {task!r}")
        run.actions = actions
        if run.results and getattr(run.results[-1], "message", ""):
            run.message = run.results[-1].message
        self.active_task = run
        self._pending_drive = None

    def _compile_follow(self, sim, actions, ticks: int = 150) -> TaskRun:
        if not sim.persons:
            raise ValueError("no person in this session to follow")
        cfg = FollowConfig()
        obs = sim.observe()
        idx = [i for i, d in enumerate(obs.detections) if d.cls == "person"]
        if not idx:
            raise ValueError("no person in view")
        state = select_target(obs.detections, idx[0], obs.pose, cfg)
        run = TaskRun("follow", obs.detections[idx[0]].entity_id)
        for _ in range(ticks):
            action, state = follow_step(state, obs, cfg)
            sim.act(action)
            sim.step_world()
            obs = sim.observe()
        run.results = []          # retention is judged by tests, not here
        return run

    # -- tick loop ------------------------------------------------------------

    def _detections_payload(self):
        dets = []
        for d in self._last_obs.detections:
            rec = {"cls": d.cls, "confidence": round(d.confidence, 4),
                   "bearing": round(d.bearing, 4), "range": round(d.range, 4)}
            if d.entity_id is not None:
                rec["id"] = d.entity_id
            dets.append(rec)
        return dets

    def _map_patch(self, full: bool):
        grid = self.occ.grid
        if full:
            rows, cols = (grid != UNKNOWN).nonzero()
        else:
            rows, cols = (grid != self._sent).nonzero()
        cells = [[int(c), int(r), int(grid[r, c])]
                 for r, c in zip(rows.tolist(), cols.tolist())]
        patch = {"cells": cells}
        if full:
            patch["size"] = [self.occ.width, self.occ.height]
            patch["cell_size"] = self.occ.cell_size
        return patch

    def _task_status(self):
        if self._finished is not None:
            return self._finished.final_status()
        if self.active_task is not None:
            return self.active_task.status()
        if self._vetoed:
            return {"kind": "manual", "vetoed": True}
        return None

    def _state_msg(self, full_map: bool = False) -> dict:
        p = self.sim.pose
        return {"type": "state",
                "pose": {"x": round(p.x, 6), "y": round(p.y, 6),
                         "theta": round(p.theta, 6)},
                "controller": self.control_holder,
                "map_patch": self._map_patch(full_map),
                "detections": self._detections_payload(),
                "task_status": self._task_status()}

    def _next_action(self) -> Action | None:
        self._vetoed = False
        run = self.active_task
        if run is not None:
            if run.index < len(run.actions):
                a = run.actions[run.index]
                run.index += 1
                if run.index >= len(run.actions):
                    self._finished, self.active_task = run, None
                return a
            self._finished, self.active_task = run, None
            return None
        a, self._pending_drive = self._pending_drive, None
        if a == Action.FORWARD and gate_blocked(self._last_obs, 0.3):
            self._vetoed = True
            return None
        return a

    def tick(self):
        """Advance one tick: answer queued messages, act, broadcast state."""
        self.tick_no += 1
        self._finished = None
        while self._queue:
            self._handle(self._queue.popleft())
        action = self._next_action()
        if action is not None:
            self.sim.act(action)
        self.sim.step_world()
        self._last_obs = self.sim.observe()
        update_occupancy(self.occ, self._last_obs)
        if self.clients:
            self._send(None, self._state_msg())
        self._sent = self.occ.grid.copy()
        return self.drain()


def run_trace(layout, trace, ticks: int, seed: int = 0,
              session_id: str = "s0", persons=()) -> str:
    """Feed a timed message trace to a fresh session; return the full stream.

    trace: iterable of (tick_index, message). The return value is the exact
    byte content a recorder would capture: one line per outbound message,
    prefixed with its recipient (- for broadcast). Same inputs, same bytes.
    """
    s = Session(layout, session_id=session_id, seed=seed, persons=persons)
    by_tick: dict[int, list] = {}
    for t, m in trace:
        by_tick.setdefault(int(t), []).append(m)
    lines = []
    for t in range(ticks):
        for m in by_tick.get(t, ()):
            s.submit(m)
        for rcpt, msg in s.tick():
            lines.append((rcpt if rcpt is not None else "-") + "\t" + encode(msg))
    return "".join(lines)
