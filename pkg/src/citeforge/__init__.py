"""citeforge: citation-network forensics toolkit.

Pipeline stages, in dependency order: ingest, graph, journal_rank, cohort,
features, detect, stats, forensics. ``synth`` generates planted-syndicate
scenarios that exercise the whole chain against known ground truth.
"""

__version__ = "0.1.0"

SUBJECTS = {
    1: "Health Sciences",
    2: "Life Sciences",
    3: "Physical Sciences",
    4: "Social Sciences & Humanities",
    5: "Multidisciplinary",
}
