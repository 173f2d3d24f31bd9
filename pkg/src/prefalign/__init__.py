"""Per-user preference models from small questionnaires.

Pipeline: discover interpretable features with an LLM, score every
questionnaire response against each feature, fit a linear per-user choice
model on the scores, then use the learned reward to rerank or tune a
generation policy and judge the results.
"""

__version__ = "0.1.0"
