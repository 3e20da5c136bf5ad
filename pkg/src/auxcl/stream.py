"""Ordered task streams: disjoint class groups with train/test sample splits.

Train samples carry no labels anywhere; test labels live in the stream
and are read only by the evaluator.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

from .errors import InvariantViolation, IoError

STREAM_NAME = "tasks.json"


@dataclass(frozen=True)
class Task:
    task_id: int
    class_ids: tuple[int, ...]
    train_ids: tuple[int, ...]
    test_ids: tuple[int, ...]
    test_labels: tuple[int, ...]


@dataclass(frozen=True)
class TaskStream:
    num_tasks: int
    tasks: tuple[Task, ...]

    def validate(self, num_classes: int, num_samples: int) -> None:
        if self.num_tasks != len(self.tasks):
            raise InvariantViolation("num_tasks disagrees with task list")
        if self.num_tasks < 1:
            raise InvariantViolation("a stream needs at least one task")
        seen_classes: set[int] = set()
        sizes = []
        for i, task in enumerate(self.tasks, start=1):
            if task.task_id != i:
                raise InvariantViolation(f"task ids must be 1..T in order, got {task.task_id}")
            cs = set(task.class_ids)
            if len(cs) != len(task.class_ids):
                raise InvariantViolation(f"task {i} repeats a class id")
            if cs & seen_classes:
                raise InvariantViolation(f"task {i} reuses classes {sorted(cs & seen_classes)}")
            if any(c < 0 or c >= num_classes for c in cs):
                raise InvariantViolation(f"task {i} class id out of range")
            seen_classes |= cs
            sizes.append(len(cs))
            tr, te = set(task.train_ids), set(task.test_ids)
            if tr & te:
                raise InvariantViolation(f"task {i} train/test ids overlap")
            ids = task.train_ids + task.test_ids
            if any(s < 0 or s >= num_samples for s in ids):
                raise InvariantViolation(f"task {i} sample id out of range")
            if len(task.test_labels) != len(task.test_ids):
                raise InvariantViolation(f"task {i} test label count mismatch")
            if any(l not in cs for l in task.test_labels):
                raise InvariantViolation(f"task {i} test label outside its class set")
        if seen_classes != set(range(num_classes)):
            raise InvariantViolation("tasks must partition the class set")
        if max(sizes) - min(sizes) > 1:
            raise InvariantViolation("classes must split (near-)equally across tasks")
        if sorted(sizes, reverse=True) != sizes:
            raise InvariantViolation("remainder classes must go to the earliest tasks")


def write_stream(stream: TaskStream, path: str | os.PathLike) -> None:
    doc = {
        "version": 1,
        "num_tasks": stream.num_tasks,
        "tasks": [
            {
                "task_id": t.task_id,
                "class_ids": list(t.class_ids),
                "train_ids": list(t.train_ids),
                "test_ids": list(t.test_ids),
                "test_labels": list(t.test_labels),
            }
            for t in stream.tasks
        ],
    }
    try:
        with open(os.fspath(path), "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IoError(str(exc)) from exc


def read_stream(path: str | os.PathLike) -> TaskStream:
    try:
        with open(os.fspath(path), "r", encoding="utf-8") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise InvariantViolation(f"task stream is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("version") != 1:
        raise InvariantViolation("task stream must be a version-1 object")
    try:
        tasks = tuple(
            Task(
                task_id=int(t["task_id"]),
                class_ids=tuple(int(c) for c in t["class_ids"]),
                train_ids=tuple(int(s) for s in t["train_ids"]),
                test_ids=tuple(int(s) for s in t["test_ids"]),
                test_labels=tuple(int(l) for l in t["test_labels"]),
            )
            for t in doc["tasks"]
        )
        return TaskStream(num_tasks=int(doc["num_tasks"]), tasks=tasks)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvariantViolation(f"malformed task stream: {exc}") from exc
