"""Synthetic micro-narrative corpus with a controllable separability knob.

The world is a handful of activities, each owning disjoint pools of step
and outcome tokens.  A story picks a protagonist and two activities: the
factual branch follows one, the counterfactual branch the other.  Every
branch ends in that activity's outcome sentence, and a fraction rho of
the outcome's four content tokens also appears in the branch's
continuation sentence.  At rho = 1 the continuation carries obs2's
content tokens in full; at lower rho the incorrect branch leaks a small
fraction of obs2's tokens instead.

Each branch sentence announces the items its continuation will name,
in the continuation's own story-random arrangement.  The factual
outcome sentence shares that arrangement, so at rho = 1 the correct
continuation equals obs2 token-for-token and a selector scoring the
corpus has a perfect margin by construction.  The counterfactual
outcome sentence draws an independent arrangement.  Token overlap
(what greedy-match scoring sees) is unaffected, but a model trained on
both branches cannot reach the continuation by re-reading the
surrounding story text: no arrangement is shared across stories, and
only the branch sentence states the items in the order the continuation
uses on every branch, so following the stated hypothesis is the one
rule that fits all of the training data, and swapping in a different
hypothesis swaps the items the model produces.

Every content slot is introduced by an ordinal anchor word: branch
sentences use one anchor set (first, second, third, last) and event
sentences another (one, two, three, four).  Each anchor therefore
occurs exactly once in a generation query, and filling a slot is a
single keyed lookup into the hypothesis rather than a positional count
over repeated filler words.

Outcome sentences name no protagonist.  Every token of a continuation
is either shared template text or stated by its branch sentence, so a
model that has learned the rule above reproduces the continuation
exactly, with no story-specific token left to guess.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .data import AbductiveInstance, Story, split_tokens
from .rng import RngStream

# fraction of obs2's content slots leaked into the incorrect continuation
# when rho = 0; the leak scales with (1 - rho)
SMALL = 0.5

N_SLOTS = 4  # content slots in an outcome sentence


@dataclass(frozen=True)
class SyntheticSpec:
    n_stories: int
    vocab_size: int = 200
    template_set: str = "v1"
    seed: int = 0
    rho: float = 1.0

    def __post_init__(self):
        if self.n_stories <= 0:
            raise ValueError(f"n_stories must be positive, got {self.n_stories}")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        if self.template_set not in TEMPLATE_SETS:
            known = sorted(TEMPLATE_SETS)
            raise ValueError(
                f"unknown template set {self.template_set!r}, known: {known}")


@dataclass(frozen=True)
class Activity:
    marker: str
    verb: str
    steps: tuple[str, str, str, str]
    outcomes: tuple[str, str, str, str]


@dataclass(frozen=True)
class TemplateSet:
    names: tuple[str, ...]
    activities: tuple[Activity, ...]
    premise_templates: tuple[str, ...]
    branch_templates: tuple[str, ...]
    step_templates: tuple[str, ...]
    outcome_template: str

    def content_tokens(self) -> set[str]:
        out = set(self.names)
        for a in self.activities:
            out.add(a.marker)
            out.add(a.verb)
            out.update(a.steps)
            out.update(a.outcomes)
        return out

    def template_tokens(self) -> set[str]:
        texts = (self.premise_templates + self.branch_templates
                 + self.step_templates + (self.outcome_template,))
        out: set[str] = set()
        for t in texts:
            # strip the format slots, keep the fixed words and punctuation
            stripped = t
            for slot in ("{name}", "{marker}", "{verb}", "{a}", "{b}",
                         "{w1}", "{w2}", "{w3}", "{w4}"):
                stripped = stripped.replace(slot, " ")
            out.update(split_tokens(stripped))
        return out

    def tokens_needed(self) -> int:
        # 7 special ids are always part of a vocabulary built downstream
        return len(self.content_tokens() | self.template_tokens()) + 7


_V1 = TemplateSet(
    names=("alice", "ben", "cara", "dana", "eli", "faye", "gus", "hana",
           "ivan", "jade", "kofi", "lena", "milo", "nina", "omar", "priya"),
    activities=(
        Activity("garden", "dig", ("trowel", "seedlings", "weeds", "compost"),
                 ("tomatoes", "blossoms", "basketful", "herbs")),
        Activity("bakery", "bake", ("flour", "dough", "whisk", "icing"),
                 ("loaves", "muffins", "tarts", "frosting")),
        Activity("lake", "paddle", ("canoe", "oars", "reeds", "ripples"),
                 ("minnows", "driftwood", "pebbles", "lilies")),
        Activity("workshop", "carve", ("plank", "chisel", "sawdust", "clamp"),
                 ("shelf", "stool", "figurine", "varnish")),
        Activity("library", "browse", ("novels", "ladder", "catalog", "lamps"),
                 ("chapters", "maps", "journals", "atlas")),
        Activity("trail", "hike", ("switchbacks", "boulders", "creek", "ferns"),
                 ("summit", "vista", "wildflowers", "hawks")),
        Activity("market", "barter", ("stalls", "crates", "scales", "vendors"),
                 ("peaches", "walnuts", "cheese", "lanterns")),
        Activity("studio", "paint", ("easel", "brushes", "palette", "rags"),
                 ("portrait", "mural", "sketches", "frames")),
    ),
    premise_templates=(
        "{name} woke up with a whole day free .",
        "{name} wanted a change of pace .",
        "{name} set out early without a plan .",
        "{name} had been restless all morning .",
    ),
    branch_templates=(
        "so {name} went to the {marker} to {verb} first {w1} , second"
        " {w2} , third {w3} , last {w4} .",
        "so {name} picked the {marker} and started to {verb} first {w1}"
        " , second {w2} , third {w3} , last {w4} .",
    ),
    step_templates=(
        "{name} worked through the {a} and the {b} at the {marker} .",
        "{name} kept busy with the {a} and the {b} at the {marker} .",
    ),
    outcome_template=("at the {marker} the day ended with one {w1} , two"
                      " {w2} , three {w3} , four {w4} ."),
)

TEMPLATE_SETS: dict[str, TemplateSet] = {"v1": _V1}


def _render_outcome(ts: TemplateSet, marker: str, slots) -> str:
    w1, w2, w3, w4 = slots
    return ts.outcome_template.format(marker=marker,
                                      w1=w1, w2=w2, w3=w3, w4=w4)


def _render_branch(rng: RngStream, ts: TemplateSet, name: str,
                   act: Activity, slots) -> str:
    w1, w2, w3, w4 = slots
    return rng.choice(ts.branch_templates).format(
        name=name, marker=act.marker, verb=act.verb,
        w1=w1, w2=w2, w3=w3, w4=w4)


def _arrange(slots, perm) -> list:
    return [slots[p] for p in perm]


def _distinct_pair(rng: RngStream, n: int) -> tuple[int, int]:
    a = int(rng.integers(0, n))
    b = (a + 1 + int(rng.integers(0, n - 1))) % n
    return a, b


def _pick_positions(rng: RngStream, count: int,
                    required: tuple[int, ...] = ()) -> set[int]:
    """count slot positions, always containing the required ones."""
    picked = set(required)
    pool = [p for p in range(N_SLOTS) if p not in picked]
    for p in rng.shuffled(pool):
        if len(picked) >= count:
            break
        picked.add(p)
    return picked


def gen_synthetic(spec: SyntheticSpec) -> tuple[list[Story], list[AbductiveInstance]]:
    """Build n_stories stories with counterfactual branches and one
    abduction instance per story, a pure function of the spec.

    Instance construction: obs1 = s1, obs2 = s5, with the factual s2 as
    the correct hypothesis and the counterfactual s2' as the incorrect
    one (slot order decided by a fair coin); each hypothesis carries its
    branch's continuation sentence as its hypothetical next event.
    """
    ts = TEMPLATE_SETS[spec.template_set]
    needed = ts.tokens_needed()
    if needed > spec.vocab_size:
        raise ValueError(
            f"template set {spec.template_set!r} needs {needed} distinct tokens "
            f"but the vocab budget is {spec.vocab_size}")

    k = round(spec.rho * N_SLOTS)            # continuation slots shared with s5
    j = round((1.0 - spec.rho) * SMALL * N_SLOTS)  # s5 slots leaked across branches

    root = RngStream("synthetic", spec.seed)
    stories: list[Story] = []
    instances: list[AbductiveInstance] = []
    for i in range(spec.n_stories):
        rng = root.split(f"story{i}")
        name = rng.choice(ts.names)
        ia, ib = _distinct_pair(rng, len(ts.activities))
        act_a, act_b = ts.activities[ia], ts.activities[ib]

        premise = rng.choice(ts.premise_templates).format(name=name)

        # factual ending: the continuation carries k of the outcome's
        # content tokens, and both sentences place their tokens with one
        # shared story-random arrangement, so at rho = 1 the
        # continuation repeats the outcome sentence token-for-token
        slots_a = list(act_a.outcomes)
        keep_a = _pick_positions(rng, k)
        fill_a = rng.shuffled(list(act_a.steps))
        cont_a = [slots_a[p] if p in keep_a else fill_a.pop()
                  for p in range(N_SLOTS)]
        perm_a = rng.shuffled(list(range(N_SLOTS)))
        steps_a = rng.shuffled(list(act_a.steps))[:2]
        s3 = _render_outcome(ts, act_a.marker, _arrange(cont_a, perm_a))
        s4 = rng.choice(ts.step_templates).format(
            name=name, a=steps_a[0], b=steps_a[1], marker=act_a.marker)
        s5 = _render_outcome(ts, act_a.marker, _arrange(slots_a, perm_a))

        # counterfactual ending: built like the factual one, with j
        # slots leaked from s5 so the incorrect next event overlaps obs2
        # in exactly j of its content slots; here the outcome sentence
        # draws its own arrangement, independent of the continuation's,
        # so on this branch the continuation's order can only be read
        # off the branch sentence
        leak = _pick_positions(rng, j)
        slots_b = [slots_a[p] if p in leak else act_b.outcomes[p]
                   for p in range(N_SLOTS)]
        keep_b = _pick_positions(rng, max(k, j), required=tuple(leak))
        fill_b = rng.shuffled(list(act_b.steps))
        cont_b = [slots_b[p] if p in keep_b else fill_b.pop()
                  for p in range(N_SLOTS)]
        perm_b = rng.shuffled(list(range(N_SLOTS)))
        steps_b = rng.shuffled(list(act_b.steps))[:2]
        s3p = _render_outcome(ts, act_b.marker, _arrange(cont_b, perm_b))
        s4p = rng.choice(ts.step_templates).format(
            name=name, a=steps_b[0], b=steps_b[1], marker=act_b.marker)
        s5p = _render_outcome(
            ts, act_b.marker,
            _arrange(slots_b, rng.shuffled(list(range(N_SLOTS)))))

        # each branch states its continuation's items in the
        # continuation's own arrangement; no other conditioning text
        # lists them in that order
        branch_a = _render_branch(rng, ts, name, act_a,
                                  _arrange(cont_a, perm_a))
        branch_b = _render_branch(rng, ts, name, act_b,
                                  _arrange(cont_b, perm_b))

        story_id = f"syn-{spec.template_set}-s{spec.seed}-{i}"
        stories.append(Story(
            premise=premise, initial=branch_a, ending=(s3, s4, s5),
            counterfactual=branch_b, edited_ending=(s3p, s4p, s5p),
            story_id=story_id))

        if rng.coin():
            hyp1, gen1, hyp2, gen2, label = branch_a, s3, branch_b, s3p, 1
        else:
            hyp1, gen1, hyp2, gen2, label = branch_b, s3p, branch_a, s3, 2
        instances.append(AbductiveInstance(
            obs1=premise, obs2=s5, hyp1=hyp1, hyp2=hyp2, label=label,
            gen1=gen1, gen2=gen2, instance_id=story_id))
    return stories, instances
