"""dialforge: domain fine-tuning data curation from service dialogues.

Pipeline: ingest and scrub a dialogue corpus, evolve task instructions
through a human review lifecycle, splice production prompts from templates,
generate labels with weighted sampling, then score the dataset on
complexity, richness, redundancy, and label quality.
"""

__version__ = "0.1.0"
