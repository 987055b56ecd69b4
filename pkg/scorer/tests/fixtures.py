"""Fixed fixture corpus: 20 scoring cases.

Each case pairs a reference with a candidate; ``kind`` is "paraphrase",
"unrelated", or "degenerate". Paraphrase/unrelated cases come in matched
pairs sharing a reference so ranking can be checked per reference.
"""

REFERENCES = [
    "the red car stopped at the first traffic light near the old bridge",
    "two cyclists crossed the intersection while the bus waited patiently",
    "a delivery van blocked the narrow lane for almost twenty minutes",
    "the pedestrian signal turned green and the crowd started to move",
    "heavy rain slowed the evening traffic on the coastal highway",
    "the tram bell rang twice before the doors finally closed",
    "a police officer directed cars around the fallen tree branch",
    "the parking garage near the market square was completely full",
]

PARAPHRASES = [
    "a red car halted at the first traffic light close to the old bridge",
    "while the bus waited calmly two cyclists rode across the intersection",
    "for nearly twenty minutes a delivery van was blocking the narrow lane",
    "when the walk signal went green the waiting crowd began to move",
    "evening traffic on the coastal highway crawled because of heavy rain",
    "before the tram doors closed at last its bell sounded two times",
    "cars were guided around the fallen branch by a police officer",
    "the garage for parking by the market square had no spaces left",
]

UNRELATED = [
    "quantum annealing schedules require careful tuning of transverse fields",
    "the sourdough starter doubled in volume after the second feeding",
    "her violin concerto received a standing ovation in the old theatre",
    "binary search trees degrade to linked lists without rebalancing",
    "the telescope captured faint light from a distant spiral galaxy",
    "fermentation temperature changes the flavor profile of the ale",
    "the chess engine sacrificed its queen for a forced checkmate",
    "volcanic soil keeps the vineyard unusually rich in minerals",
]

DEGENERATE_CANDIDATES = [
    "",                                      # empty
    "yes",                                   # far too short
    "stop stop stop stop stop stop go",      # dominated by one token
    "ok ok ok ok ok ok ok ok",               # dominated by one token
]


def corpus():
    """The 20 fixture cases as (candidate, reference, kind) triples."""
    cases = []
    for ref, para in zip(REFERENCES, PARAPHRASES):
        cases.append((para, ref, "paraphrase"))
    for ref, unrel in zip(REFERENCES, UNRELATED):
        cases.append((unrel, ref, "unrelated"))
    for i, cand in enumerate(DEGENERATE_CANDIDATES):
        cases.append((cand, REFERENCES[i % len(REFERENCES)], "degenerate"))
    assert len(cases) == 20
    return cases
