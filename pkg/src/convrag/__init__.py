"""Adaptive retrieval-augmented conversation engine.

Per turn: decide whether to retrieve, summarize the conversation into a
retrieval query when needed, generate one candidate response per passage,
score candidates with reflection-token probabilities, and select the best
response by segment-level beam search. The language model sits behind a
backend contract, so the whole pipeline runs deterministically against a
scripted mock.
"""

__version__ = "0.1.0"
