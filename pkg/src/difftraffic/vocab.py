"""Closed-vocabulary prompt composition.

Labels render through fixed templates into role-rephrased sentences: the
conditioned agent is always called "target agent" and everyone else becomes
"other agent1", "other agent2", ... in id order. Tokens are lowercase words
from a closed list; composition is the only tokenizer, so label -> prompt ->
tokens is total by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

from .labeling import InteractionKind, InteractionLabel

NULL_TOKEN = "<null>"

MAX_OTHER_AGENTS = 7

TAG_PHRASES = {
    "parked": "is parked",
    "off_road": "is off the main road",
    "static": "is static",
    "moving_slowly": "is moving slowly",
    "speeding_up": "is speeding up",
    "slowing_down": "is slowing down",
    "constant_speed": "is moving at a constant speed",
    "turning_right": "is turning right",
    "turning_left": "is turning left",
    "going_straight": "is going straight",
    "crossing_intersection": "is crossing the intersection",
    "approaching_intersection": "is approaching the intersection",
}
for _pos in ("rightmost", "middle", "leftmost"):
    TAG_PHRASES[f"lane_position_{_pos}"] = f"is in the {_pos} lane"
for _a in ("rightmost", "middle", "leftmost"):
    for _b in ("rightmost", "middle", "leftmost"):
        if _a != _b:
            TAG_PHRASES[f"lane_change_{_a}_to_{_b}"] = \
                f"changes lanes from the {_a} lane to the {_b} lane"

# the clause order used when several tags apply
TAG_ORDER = list(TAG_PHRASES)

INTERACTION_TEMPLATES = {
    (InteractionKind.YIELDING, "intersection yielding"):
        "{A} yields to {B} at the intersection",
    (InteractionKind.YIELDING, "yielding before merging or lane change"):
        "{A} yields to {B} before merging",
    (InteractionKind.YIELDING, "yielding to merging or lane change cars"):
        "{A} yields to {B} merging into the lane",
    (InteractionKind.YIELDING, "roundabout yielding"):
        "{A} yields to {B} at the roundabout",
    (InteractionKind.FOLLOWING_STOPPING, "following with a lead vehicle"):
        "{A} follows behind {B}",
    (InteractionKind.FOLLOWING_STOPPING, "following a slow moving lead"):
        "{A} follows behind the slow moving {B}",
    (InteractionKind.FOLLOWING_STOPPING, "tailgating"):
        "{A} tailgates {B}",
    (InteractionKind.FOLLOWING_STOPPING, "stopping behind a lead vehicle"):
        "{A} stops behind {B}",
    (InteractionKind.FOLLOWING_STOPPING, "stopping behind an intersection"):
        "{A} stops behind the intersection near {B}",
    (InteractionKind.PASSING, "passing through an intersection with yielding vehicles"):
        "{A} passes through the intersection while {B} yields",
    (InteractionKind.PASSING, "passing through a roundabout"):
        "{A} passes through the roundabout ahead of {B}",
    (InteractionKind.PASSING, "maintaining speed while driving"):
        "{A} maintains speed while driving past {B}",
    (InteractionKind.PASSING, "passing as a leading vehicle"):
        "{A} passes as a leading vehicle ahead of {B}",
    (InteractionKind.OVERTAKING, "standard overtaking"):
        "{A} overtakes {B}",
    (InteractionKind.OVERTAKING, "car avoidance"):
        "{A} swerves to avoid {B}",
    (InteractionKind.OVERTAKING, "high speed overtaking"):
        "{A} overtakes {B} at high speed",
    (InteractionKind.LANE_CHANGE, "changing lane with lead or trail"):
        "{A} changes lanes near {B}",
    (InteractionKind.LANE_CHANGE, "changing lane for turn or exit"):
        "{A} changes lanes before turning near {B}",
    (InteractionKind.LANE_CHANGE, "changing lane for overtaking"):
        "{A} changes lanes to overtake {B}",
    (InteractionKind.LANE_CHANGE, "lane change for avoiding obstacles or slower traffic"):
        "{A} changes lanes to avoid the slower {B}",
    (InteractionKind.LANE_CHANGE, "lane change for merging"):
        "{A} changes lanes to merge near {B}",
    (InteractionKind.MERGING, "standard merge"):
        "{A} merges into the lane of {B}",
    (InteractionKind.MERGING, "lane reduction merge"):
        "{A} merges at the lane reduction near {B}",
    (InteractionKind.MERGING, "zipper merge"):
        "{A} zipper merges with {B}",
    (InteractionKind.MERGING, "highway on ramp accelerating merge"):
        "{A} accelerates and merges from the ramp near {B}",
    (InteractionKind.MERGING, "late merge"):
        "{A} merges late in front of {B}",
}


class VocabularyError(ValueError):
    pass


def _build_vocabulary() -> list:
    words = {NULL_TOKEN, "and", "target", "other", "agent"}
    for i in range(1, MAX_OTHER_AGENTS + 1):
        words.add(f"agent{i}")
    for phrase in TAG_PHRASES.values():
        words.update(phrase.split())
    for template in INTERACTION_TEMPLATES.values():
        words.update(w for w in template.split() if w not in ("{A}", "{B}"))
    ordered = [NULL_TOKEN] + sorted(w for w in words if w != NULL_TOKEN)
    return ordered


TOKENS = _build_vocabulary()
TOKEN_IDS = {t: i for i, t in enumerate(TOKENS)}
NULL_ID = TOKEN_IDS[NULL_TOKEN]
VOCAB_SIZE = len(TOKENS)


@dataclass(frozen=True)
class PromptText:
    tokens: tuple  # token ids
    raw: str
    target_agent: int

    @property
    def is_null(self) -> bool:
        return len(self.tokens) == 0 or tuple(self.tokens) == (NULL_ID,)


NULL_PROMPT = PromptText(tokens=(NULL_ID,), raw="", target_agent=-1)


def tokenize(text: str) -> tuple:
    ids = []
    for w in text.split():
        if w not in TOKEN_IDS:
            raise VocabularyError(f"word {w!r} is outside the closed vocabulary")
        ids.append(TOKEN_IDS[w])
    return tuple(ids)


def _role(agent: int, target: int, order: list) -> str:
    if agent == target:
        return "target agent"
    if agent not in order:
        order.append(agent)
    idx = order.index(agent) + 1
    if idx > MAX_OTHER_AGENTS:
        raise VocabularyError("too many distinct other agents for the vocabulary")
    return f"other agent{idx}"


def compose_prompt(labels: dict, target: int) -> PromptText:
    """Render one agent's prompt: interaction clause plus its behavior tags.

    `labels` is the scenario label dict ({"tags": [...], "interactions":
    [InteractionLabel, ...]}). The interaction mentioning the target (actor
    preferred) provides the leading clause; the target's heuristic tags are
    appended as "and ..." clauses in canonical order.
    """
    tags = labels.get("tags", [])
    if target < 0 or target >= len(tags):
        raise VocabularyError(f"target agent {target} has no labels")
    interactions = labels.get("interactions", [])
    label = next((l for l in interactions if l.actor == target), None)
    if label is None:
        label = next((l for l in interactions if l.other == target), None)

    other_order: list = []
    clauses = []
    if label is not None:
        template = INTERACTION_TEMPLATES[(label.kind, label.subtype)]
        clauses.append(template.format(A=_role(label.actor, target, other_order),
                                       B=_role(label.other, target, other_order)))
    target_tags = [t for t in TAG_ORDER if t in tags[target]]
    for i, tag in enumerate(target_tags):
        phrase = TAG_PHRASES[tag]
        if not clauses and i == 0:
            clauses.append(f"target agent {phrase}")
        else:
            clauses.append(phrase)
    if not clauses:
        return PromptText(tokens=(NULL_ID,), raw="", target_agent=target)
    raw = " and ".join(clauses)
    return PromptText(tokens=tokenize(raw), raw=raw, target_agent=target)


def interaction_prompt(label: InteractionLabel, target: int) -> PromptText:
    """Prompt for a bare interaction label (no tags); used by tests and demos."""
    order: list = []
    raw = INTERACTION_TEMPLATES[(label.kind, label.subtype)].format(
        A=_role(label.actor, target, order), B=_role(label.other, target, order))
    return PromptText(tokens=tokenize(raw), raw=raw, target_agent=target)


def save_vocabulary(path) -> None:
    """One token per line; line index equals token id."""
    with open(path, "w", encoding="utf-8") as fh:
        for tok in TOKENS:
            fh.write(tok + "\n")


def load_vocabulary(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.strip()]
