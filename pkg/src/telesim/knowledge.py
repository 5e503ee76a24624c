"""Spatial relational graph: priors, conditionals, area prediction, GCN embedding."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .world import REGION_KINDS

# The detector vocabulary: the indoor MS-COCO subset plus structural classes.
COCO_INDOOR_CLASSES = (
    "bench", "bottle", "wine glass", "cup", "fork", "knife", "spoon", "bowl",
    "banana", "apple", "sandwich", "orange", "broccoli", "carrot", "hot dog",
    "pizza", "donut", "cake", "chair", "sofa", "potted plant", "bed",
    "dining table", "toilet", "tv monitor", "laptop", "mouse", "remote",
    "keyboard", "cell phone", "microwave", "oven", "toaster", "sink",
    "refrigerator", "book", "clock", "vase", "scissors", "teddy bear",
    "hair drier", "toothbrush",
)
STRUCTURAL_CLASSES = ("open door", "closed door", "free area")
OBJECT_CLASSES = COCO_INDOOR_CLASSES + STRUCTURAL_CLASSES

# Region adjacency prior: which kinds plausibly border which. The corridor
# reaches everything; a few room pairs are natural neighbors.
_ADJACENT = {
    ("kitchen", "dining room"): 0.7,
    ("dining room", "living room"): 0.6,
    ("living room", "balcony"): 0.5,
    ("bedroom", "bathroom"): 0.5,
    ("bathroom", "toilet"): 0.4,
    ("bedroom", "study room"): 0.4,
}
DEFAULT_REGION_TRANSITION = {}
for _a in REGION_KINDS:
    for _b in REGION_KINDS:
        if _a == _b:
            continue
        if "passage" in (_a, _b):
            w = 0.9
        else:
            w = _ADJACENT.get((_a, _b)) or _ADJACENT.get((_b, _a)) or 0.1
        DEFAULT_REGION_TRANSITION[(_a, _b)] = w


@dataclass
class RelationGraph:
    object_classes: tuple
    region_kinds: tuple
    object_prior: dict            # p(O_x), sums to 1
    region_prior: dict            # p(R_y), sums to 1
    conditional: dict             # conditional[cls][region] = p(R_y | O_x), row-stochastic
    survey: dict                  # raw [0,1] weights: survey[cls][region]
    object_object_weight: dict = field(default_factory=dict)   # {(a,b): w}, a<b
    region_transition: dict = field(default_factory=lambda: dict(DEFAULT_REGION_TRANSITION))

    def __post_init__(self):
        for cls, row in self.conditional.items():
            s = sum(row.values())
            if abs(s - 1.0) > 1e-9:
                raise ValueError(f"conditional row for {cls!r} sums to {s}")
        for name, prior in (("object", self.object_prior), ("region", self.region_prior)):
            s = sum(prior.values())
            if abs(s - 1.0) > 1e-9:
                raise ValueError(f"{name} prior sums to {s}")

    def survey_weight(self, cls: str, region: str) -> float:
        return self.survey.get(cls, {}).get(region, 0.0)

    def top_region(self, cls: str):
        """(region, p) with the highest conditional for cls; ties alphabetical."""
        row = self.conditional[cls]
        region = min(row, key=lambda r: (-row[r], r))
        return region, row[region]

    def object_pair_weight(self, a: str, b: str) -> float:
        if a == b:
            return 1.0
        key = (a, b) if a < b else (b, a)
        return self.object_object_weight.get(key, 0.0)

    def transition(self, a: str, b: str) -> float:
        if a == b:
            return 0.0
        return self.region_transition.get((a, b), 0.0)


def _derive_pair_weights(survey: dict) -> dict:
    """Affinity overlap sum_r min / sum_r max, in [0,1]."""
    out = {}
    classes = sorted(survey)
    for i, a in enumerate(classes):
        for b in classes[i + 1:]:
            num = den = 0.0
            for region, wa in survey[a].items():
                wb = survey[b].get(region, 0.0)
                num += min(wa, wb)
                den += max(wa, wb)
            if den > 0:
                out[(a, b)] = num / den
    return out


def load_survey_graph(table_file) -> RelationGraph:
    """Build the graph from a CSV of object,region,weight rows."""
    survey = {}
    with open(table_file, newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            cls, region = row["object"].strip(), row["region"].strip()
            if region not in REGION_KINDS:
                raise ValueError(f"unknown region in table: {region!r}")
            w = float(row["weight"])
            if not 0.0 <= w <= 1.0:
                raise ValueError(f"weight out of [0,1] for ({cls}, {region}): {w}")
            survey.setdefault(cls, {})[region] = w
    for cls in COCO_INDOOR_CLASSES:
        if cls not in survey:
            raise ValueError(f"survey table missing object class row: {cls!r}")
    for cls, row in survey.items():
        missing = [r for r in REGION_KINDS if r not in row]
        if missing:
            raise ValueError(f"survey table missing ({cls!r}, {missing[0]!r}) row")
    conditional = {}
    for cls, row in survey.items():
        s = sum(row.values())
        if s <= 0:
            raise ValueError(f"non-normalizable zero row for {cls!r}")
        conditional[cls] = {r: w / s for r, w in row.items()}
    classes = tuple(sorted(survey))
    n = len(classes)
    return RelationGraph(
        object_classes=classes,
        region_kinds=tuple(REGION_KINDS),
        object_prior={c: 1.0 / n for c in classes},
        region_prior={r: 1.0 / len(REGION_KINDS) for r in REGION_KINDS},
        conditional=conditional,
        survey=survey,
        object_object_weight=_derive_pair_weights(survey),
    )


_DEFAULT_GRAPH = None


def default_graph() -> RelationGraph:
    global _DEFAULT_GRAPH
    if _DEFAULT_GRAPH is None:
        ref = resources.files("telesim.data").joinpath("survey_table.csv")
        with resources.as_file(ref) as path:
            _DEFAULT_GRAPH = load_survey_graph(path)
    return _DEFAULT_GRAPH


def learn_graph_from_walks(walk_logs) -> RelationGraph:
    """Counts from walk logs: sequences of (region_kind, visible object classes).

    p(R_y|O_x) = Laplace-smoothed co-occurrence; priors from frequencies.
    """
    logs = [list(log) for log in walk_logs]
    if not logs or all(len(log) == 0 for log in logs):
        raise ValueError("empty walk logs")
    obj_region = {c: {r: 0 for r in REGION_KINDS} for c in OBJECT_CLASSES}
    region_count = {r: 0 for r in REGION_KINDS}
    pair_count = {}
    trans_count = {}
    for log in logs:
        prev_region = None
        for region, classes in log:
            if region not in REGION_KINDS:
                raise ValueError(f"unknown region in walk log: {region!r}")
            region_count[region] += 1
            seen = sorted(set(classes))
            for cls in seen:
                if cls not in obj_region:
                    raise ValueError(f"unknown object class in walk log: {cls!r}")
                obj_region[cls][region] += 1
            for i, a in enumerate(seen):
                for b in seen[i + 1:]:
                    pair_count[(a, b)] = pair_count.get((a, b), 0) + 1
            if prev_region is not None and prev_region != region:
                key = (prev_region, region)
                trans_count[key] = trans_count.get(key, 0) + 1
                trans_count[(region, prev_region)] = trans_count.get((region, prev_region), 0) + 1
            prev_region = region
    nr = len(REGION_KINDS)
    conditional = {}
    survey = {}
    for cls, counts in obj_region.items():
        total = sum(counts.values())
        conditional[cls] = {r: (counts[r] + 1) / (total + nr) for r in REGION_KINDS}
        peak = max(counts.values()) or 1
        survey[cls] = {r: counts[r] / peak for r in REGION_KINDS}
    total_obj = sum(sum(c.values()) for c in obj_region.values())
    nc = len(OBJECT_CLASSES)
    object_prior = {c: (sum(obj_region[c].values()) + 1) / (total_obj + nc)
                    for c in OBJECT_CLASSES}
    total_region = sum(region_count.values())
    region_prior = {r: (region_count[r] + 1) / (total_region + nr) for r in REGION_KINDS}
    max_pair = max(pair_count.values()) if pair_count else 1
    pair_w = {k: v / max_pair for k, v in pair_count.items()}
    transition = dict(DEFAULT_REGION_TRANSITION)
    if trans_count:
        max_t = max(trans_count.values())
        for key, v in trans_count.items():
            transition[key] = v / max_t
    return RelationGraph(
        object_classes=tuple(sorted(obj_region)),
        region_kinds=tuple(REGION_KINDS),
        object_prior=object_prior,
        region_prior=region_prior,
        conditional=conditional,
        survey=survey,
        object_object_weight=pair_w,
        region_transition=transition,
    )


def predict_area(detections, g: RelationGraph):
    """Ranked (region, score) list; score = sum over detections of
    p(O_x) * p(R_y) * c(O_x) * p(R_y|O_x) / N."""
    if not detections:
        raise ValueError("no evidence: empty detections")
    usable = [d for d in detections if d.cls in g.conditional]
    if not usable:
        raise ValueError("no evidence: no detection class present in graph")
    n = len(usable)
    scores = {r: 0.0 for r in g.region_kinds}
    for det in usable:
        po = g.object_prior.get(det.cls, 0.0)
        row = g.conditional[det.cls]
        for region in g.region_kinds:
            scores[region] += po * g.region_prior[region] * det.confidence * row[region] / n
    return sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))


def early_stop_region(det, g: RelationGraph, conf_threshold: float = 0.7):
    """Region whose conditional for this detection exceeds 0.9, if confident."""
    if det.cls not in g.conditional or det.confidence < conf_threshold:
        return None
    region, p = g.top_region(det.cls)
    return region if p > 0.9 else None


# ---------------------------------------------------------------------------
# GCN node embedding

def _node_list(g: RelationGraph):
    return ([("object", c) for c in g.object_classes]
            + [("region", r) for r in g.region_kinds])


def _adjacency(g: RelationGraph) -> np.ndarray:
    nodes = _node_list(g)
    index = {node: i for i, node in enumerate(nodes)}
    n = len(nodes)
    a = np.zeros((n, n))
    for cls in g.object_classes:
        i = index[("object", cls)]
        for region in g.region_kinds:
            w = g.survey_weight(cls, region)
            if w > 0:
                j = index[("region", region)]
                a[i, j] = a[j, i] = w
    for (x, y), w in g.object_object_weight.items():
        if x in g.object_classes and y in g.object_classes:
            i, j = index[("object", x)], index[("object", y)]
            a[i, j] = a[j, i] = max(a[i, j], w)
    for (x, y), w in g.region_transition.items():
        i, j = index[("region", x)], index[("region", y)]
        a[i, j] = a[j, i] = max(a[i, j], w)
    return a


@dataclass
class NodeEmbedding:
    vectors: np.ndarray    # (n_nodes, 128)
    index: dict            # node key -> row

    def of(self, kind: str, name: str) -> np.ndarray:
        key = (kind, name)
        if key not in self.index:
            raise KeyError(f"unknown {kind} node: {name!r}")
        return self.vectors[self.index[key]]

    def cosine(self, a, b) -> float:
        va, vb = self.of(*a), self.of(*b)
        den = float(np.linalg.norm(va) * np.linalg.norm(vb))
        return float(va @ vb / den) if den > 0 else 0.0


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def gcn_embed(g: RelationGraph, seed: int = 0, dim: int = 128,
              hidden: int = 64, epochs: int = 200, lr: float = 0.05) -> NodeEmbedding:
    """Three propagation layers over A_hat = D^-1/2 (A+I) D^-1/2 with one-hot
    inputs; weights fitted to a link-prediction objective on graph edges."""
    nodes = _node_list(g)
    index = {node: i for i, node in enumerate(nodes)}
    n = len(nodes)
    a = _adjacency(g)
    a_hat = a + np.eye(n)
    d_inv_sqrt = 1.0 / np.sqrt(a_hat.sum(axis=1))
    a_hat = a_hat * d_inv_sqrt[:, None] * d_inv_sqrt[None, :]

    rng = np.random.default_rng(seed)
    w0 = rng.normal(0.0, 0.1, (n, hidden))
    w1 = rng.normal(0.0, 0.1, (hidden, hidden))
    w2 = rng.normal(0.0, 0.1, (hidden, dim))

    pos = [(i, j) for i in range(n) for j in range(i + 1, n) if a[i, j] >= 0.3]
    zero = [(i, j) for i in range(n) for j in range(i + 1, n) if a[i, j] == 0.0]
    if pos and zero:
        picks = rng.choice(len(zero), size=min(len(pos), len(zero)), replace=False)
        neg = [zero[k] for k in picks]
    else:
        neg = []
    pairs = [(i, j, 1.0) for i, j in pos] + [(i, j, 0.0) for i, j in neg]

    for _ in range(epochs):
        p0 = a_hat @ w0
        h1 = np.maximum(p0, 0.0)
        p1 = a_hat @ h1
        h2 = np.maximum(p1 @ w1, 0.0)
        p2 = a_hat @ h2
        z = p2 @ w2
        if not pairs:
            break
        dz = np.zeros_like(z)
        scale = 1.0 / len(pairs)
        for i, j, y in pairs:
            s = _sigmoid(float(z[i] @ z[j]))
            grad = (s - y) * scale
            dz[i] += grad * z[j]
            dz[j] += grad * z[i]
        dw2 = p2.T @ dz
        dh2 = (a_hat @ (dz @ w2.T)) * (h2 > 0)
        dw1 = p1.T @ dh2
        dh1 = (a_hat @ (dh2 @ w1.T)) * (h1 > 0)
        dw0 = a_hat @ dh1
        w0 -= lr * dw0
        w1 -= lr * dw1
        w2 -= lr * dw2

    p0 = a_hat @ w0
    h1 = np.maximum(p0, 0.0)
    h2 = np.maximum((a_hat @ h1) @ w1, 0.0)
    z = (a_hat @ h2) @ w2
    return NodeEmbedding(z, index)


def object_direction_score(embeds: NodeEmbedding, visible, target: str):
    """Cosine similarity of each visible detection's class to the target class."""
    if ("object", target) not in embeds.index:
        raise KeyError(f"unknown object class: {target!r}")
    out = []
    for det in visible:
        if ("object", det.cls) not in embeds.index:
            raise KeyError(f"unknown object class: {det.cls!r}")
        out.append((det, embeds.cosine(("object", target), ("object", det.cls))))
    return out


# ---------------------------------------------------------------------------
# Export

def graph_to_json(g: RelationGraph) -> str:
    doc = {
        "object_classes": list(g.object_classes),
        "region_kinds": list(g.region_kinds),
        "object_prior": g.object_prior,
        "region_prior": g.region_prior,
        "conditional": g.conditional,
        "survey": g.survey,
        "object_object_weight": {f"{a}|{b}": w for (a, b), w in sorted(g.object_object_weight.items())},
        "region_transition": {f"{a}|{b}": w for (a, b), w in sorted(g.region_transition.items())},
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def graph_from_json(text: str) -> RelationGraph:
    doc = json.loads(text)
    return RelationGraph(
        object_classes=tuple(doc["object_classes"]),
        region_kinds=tuple(doc["region_kinds"]),
        object_prior=doc["object_prior"],
        region_prior=doc["region_prior"],
        conditional=doc["conditional"],
        survey=doc["survey"],
        object_object_weight={tuple(k.split("|")): w
                              for k, w in doc["object_object_weight"].items()},
        region_transition={tuple(k.split("|")): w
                           for k, w in doc["region_transition"].items()},
    )
