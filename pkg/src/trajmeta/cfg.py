"""Contextual-state motif graphs.

Each turn gets a state ``(category, error context, stage)``.  A motif is a
pair of consecutive states; the graph's nodes are the distinct motifs and its
edges join consecutive motif instances, so each edge spans three turns.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, fields
from pathlib import Path

from . import kernels
from .annotate import AnnotatedTrajectory
from .model import ActionCategory

CFG_FEATURE_NAMES = (
    "motif_entropy",
    "cfg_transition_entropy",
    "self_loop_rate",
    "revisit_rate",
    "backtrack_rate",
    "post_error_motif_ratio",
)


class ErrorContext(str, enum.Enum):
    CLEAN = "clean"
    POST_ERROR = "post_error"


class Stage(str, enum.Enum):
    EARLY = "early"
    MID = "mid"
    LATE = "late"


_CONTEXTS = tuple(ErrorContext)
_STAGES = tuple(Stage)


@dataclass(frozen=True)
class ContextState:
    alpha: ActionCategory
    epsilon: ErrorContext
    sigma: Stage

    @property
    def code(self) -> int:
        return (self.alpha.code * 2 + _CONTEXTS.index(self.epsilon)) * 3 + _STAGES.index(self.sigma)

    @property
    def label(self) -> str:
        return f"{self.alpha.value}|{self.epsilon.value}|{self.sigma.value}"


@dataclass(frozen=True)
class Motif:
    first: ContextState
    second: ContextState

    @property
    def label(self) -> str:
        return f"{self.first.label} -> {self.second.label}"


@dataclass(frozen=True)
class MotifGraph:
    nodes: tuple[Motif, ...]
    edges: dict[tuple[Motif, Motif], int]
    instances: tuple[Motif, ...]

    @property
    def edge_instances(self) -> int:
        return sum(self.edges.values())


@dataclass(frozen=True)
class CfgFeatures:
    motif_entropy: float
    cfg_transition_entropy: float
    self_loop_rate: float
    revisit_rate: float
    backtrack_rate: float
    post_error_motif_ratio: float

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def stage_of(index: int, n: int) -> Stage:
    if index <= -(-n // 3):
        return Stage.EARLY
    if index > -(-2 * n // 3):
        return Stage.LATE
    return Stage.MID


def states_from(categories, error_flags) -> list[ContextState]:
    n = len(categories)
    out = []
    for i, cat in enumerate(categories):
        eps = ErrorContext.POST_ERROR if i > 0 and error_flags[i - 1] else ErrorContext.CLEAN
        out.append(ContextState(ActionCategory(cat), eps, stage_of(i + 1, n)))
    return out


def assign_states(a: AnnotatedTrajectory) -> list[ContextState]:
    return states_from(a.categories, a.error_flags)


def build_graph(states: list[ContextState]) -> MotifGraph:
    instances = tuple(Motif(states[i], states[i + 1]) for i in range(len(states) - 1))
    nodes = tuple(dict.fromkeys(instances))
    # Counter keeps first-appearance order
    edges = dict(Counter(zip(instances, instances[1:])))
    return MotifGraph(nodes=nodes, edges=edges, instances=instances)


def cfg_features(g: MotifGraph | None, states: list[ContextState]) -> CfgFeatures:
    """The six graph features; ``g`` is implied by ``states`` and may be None."""
    codes = [s.code for s in states]
    post = [1 if s.epsilon is ErrorContext.POST_ERROR else 0 for s in states]
    return CfgFeatures(*(float(x) for x in kernels.motif_stats(codes, post)))


def trajectory_cfg_features(a: AnnotatedTrajectory) -> CfgFeatures:
    return cfg_features(None, assign_states(a))


def to_dot(g: MotifGraph, name: str = "motifs") -> str:
    def q(s: str) -> str:
        return '"' + s.replace('"', r"\"") + '"'

    lines = [f"digraph {q(name)} {{"]
    for m in g.nodes:
        lines.append(f"  {q(m.label)};")
    for (src, dst), mult in g.edges.items():
        lines.append(f"  {q(src.label)} -> {q(dst.label)} [weight={mult}, label=\"x{mult}\"];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_dot(a: AnnotatedTrajectory, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    safe = "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in a.base.id)
    path = directory / f"{safe}.dot"
    path.write_text(to_dot(build_graph(assign_states(a)), a.base.id), encoding="utf-8")
    return path

