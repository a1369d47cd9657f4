"""Knowledge-enhanced punchline generation.

Pipeline: build a joke corpus, attach background triples, turn them into
knowledge graphs, encode with graph attention, and generate punchlines
with a transformer whose decoder gates knowledge into each block.
"""

__version__ = "0.1.0"
