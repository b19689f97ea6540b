"""Crop-health diagnosis agent: routes queries to a disease classifier,
a lesion detector, or a knowledge retriever, fuses the tool output into
the final answer, and ships an SC/IC evaluation harness. Fully runnable
offline against synthetic fixtures."""

__version__ = "0.1.0"
