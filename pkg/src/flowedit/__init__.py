"""RL finetuning of chunked flow policies with bounded action edits,
a value-ensemble critic, and human-in-the-loop corrections."""

__version__ = "0.1.0"
